"""Unit tests for operand schemes and product tables."""

import numpy as np
import pytest

from encmac.errors import CodeRangeError, ContractError, UnsupportedSizeError
from encmac.quant import (
    CODEBOOK,
    QuantScheme,
    build_product_table,
    decode_operand,
    product_table_csv,
    quantize,
)

# (code1, code2) -> value rows of the signed 2-bit multiplier
FIG_ROWS = {
    (0b10, 0b10): 4,
    (0b10, 0b01): -2,
    (0b10, 0b00): 0,
    (0b11, 0b11): 1,
    (0b01, 0b10): -2,
    (0b01, 0b01): 1,
}


@pytest.mark.unit
def test_decode_uniform_codes(scheme2):
    """Test two's-complement decoding of uniform codes."""
    assert decode_operand(scheme2, 0b10) == -2
    assert decode_operand(scheme2, 0b00) == 0
    assert decode_operand(scheme2, 0b11) == -1
    assert decode_operand(scheme2, 0b01) == 1


@pytest.mark.unit
def test_decode_codebook_lookup():
    """Test that codebook codes index the levels."""
    scheme = QuantScheme.from_codebook([-1.5, -0.5, 0.5, 1.5])
    assert scheme.kind == CODEBOOK
    assert scheme.width == 2
    assert decode_operand(scheme, 0b11) == 1.5


@pytest.mark.unit
@pytest.mark.parametrize("code", [-1, 4, 17])
def test_decode_out_of_range(scheme2, code):
    """Test that out-of-range codes are rejected."""
    with pytest.raises(CodeRangeError):
        decode_operand(scheme2, code)


@pytest.mark.unit
def test_codebook_length_must_match_width():
    """Test that a codebook needs 2^W levels."""
    with pytest.raises(ContractError):
        QuantScheme(CODEBOOK, 2, (0.0, 1.0, 2.0))
    with pytest.raises(ContractError):
        QuantScheme.from_codebook([0.0, 1.0, 2.0])
    with pytest.raises(ContractError):
        QuantScheme.from_codebook([0.0, float("nan")])


@pytest.mark.unit
def test_table_2bit_rows(table2):
    """Test the rows of the 2-bit product table."""
    assert len(table2) == 16
    grid = table2.value_grid
    for (c1, c2), value in FIG_ROWS.items():
        assert grid[c1, c2] == value
    # code1-major ascending order
    assert table2.code1.tolist() == [0] * 4 + [1] * 4 + [2] * 4 + [3] * 4
    assert table2.code2.tolist() == [0, 1, 2, 3] * 4


@pytest.mark.unit
def test_table_8bit_extremes():
    """Test the extreme products of the 8-bit table."""
    scheme = QuantScheme.uniform(8)
    table = build_product_table(scheme, scheme)
    assert len(table) == 65536
    grid = table.value_grid
    assert grid[0x80, 0x80] == 16384
    assert np.max(np.abs(table.values)) == 16384
    assert np.count_nonzero(np.abs(table.values) == 16384) == 1
    # commutativity
    np.testing.assert_array_equal(grid, grid.T)
    # zero rows
    assert np.all(grid[0, :] == 0) and np.all(grid[:, 0] == 0)
    assert table.rms == pytest.approx(5461.5, rel=1e-3)


@pytest.mark.unit
def test_zero_products_are_positive_zero():
    """Test that zero products are stored as +0.0."""
    book = QuantScheme.from_codebook([-1.0, 0.0, 0.5, 2.0])
    table = build_product_table(book, book)
    assert not np.any(np.signbit(table.values[table.values == 0]))


@pytest.mark.unit
def test_table_width_limits():
    """Test the supported operand widths."""
    with pytest.raises(UnsupportedSizeError):
        build_product_table(QuantScheme.uniform(9), QuantScheme.uniform(9))
    with pytest.raises(ContractError):
        build_product_table(QuantScheme.uniform(2), QuantScheme.uniform(3))


@pytest.mark.unit
def test_table_csv(table2):
    """Test the truth table CSV format."""
    lines = product_table_csv(table2).splitlines()
    assert lines[0] == "code1,code2,value"
    assert len(lines) == 17
    assert "10,10,4.0" in lines
    assert "10,01,-2.0" in lines
    assert "00,11,0.0" in lines


@pytest.mark.unit
def test_quantize_uniform_saturates(scheme2):
    """Test that uniform quantization saturates at the range ends."""
    codes = quantize(scheme2, np.array([-5.0, -1.2, 0.4, 0.6, 9.0]))
    assert codes.tolist() == [0b10, 0b11, 0b00, 0b01, 0b01]


@pytest.mark.unit
def test_quantize_codebook_nearest():
    """Test that codebook quantization picks the nearest level."""
    scheme = QuantScheme.from_codebook([-1.5, -0.5, 0.5, 1.5])
    assert quantize(scheme, np.array([-9.0, -0.4, 0.0, 1.2])).tolist() == [0, 1, 1, 3]


@pytest.mark.unit
def test_scheme_dict_roundtrip_and_unknown_keys():
    """Test scheme serialization and rejection of unknown keys."""
    scheme = QuantScheme.from_codebook([-1.5, -0.5, 0.5, 1.5])
    assert QuantScheme.from_dict(scheme.to_dict()) == scheme
    with pytest.raises(ContractError):
        QuantScheme.from_dict({"kind": "uniform-signed", "width": 2, "scale": 3})
