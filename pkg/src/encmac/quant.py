"""Operand quantization schemes and the exact product truth table."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import CodeRangeError, ContractError, UnsupportedSizeError

logger = logging.getLogger(__name__)

UNIFORM = "uniform-signed"
CODEBOOK = "nonuniform-codebook"
MAX_OPERAND_WIDTH = 8


@dataclass(frozen=True)
class QuantScheme:
    """How W-bit operand codes map to real values.

    A uniform scheme reads the code as a two's-complement integer. A codebook
    scheme looks the code up (as an unsigned index) in a list of 2^W levels.
    """

    kind: str
    width: int
    codebook: Optional[Tuple[float, ...]] = field(default=None)

    def __post_init__(self):
        if self.kind not in (UNIFORM, CODEBOOK):
            raise ContractError(f"Unknown quantization kind: {self.kind!r}")
        if self.width < 1:
            raise UnsupportedSizeError(f"Operand width must be >= 1, got {self.width}")
        if self.kind == UNIFORM:
            if self.codebook is not None:
                raise ContractError("Uniform schemes take no codebook")
            return
        if self.codebook is None:
            raise ContractError("Codebook schemes need a codebook")
        levels = tuple(float(v) for v in self.codebook)
        if len(levels) != 1 << self.width:
            raise ContractError(
                f"Codebook for width {self.width} needs {1 << self.width} levels, got {len(levels)}"
            )
        if not all(np.isfinite(levels)):
            raise ContractError("Codebook levels must be finite")
        object.__setattr__(self, "codebook", levels)

    @classmethod
    def uniform(cls, width: int) -> "QuantScheme":
        return cls(UNIFORM, width)

    @classmethod
    def from_codebook(cls, levels: Sequence[float]) -> "QuantScheme":
        n = len(levels)
        width = n.bit_length() - 1
        if n < 2 or 1 << width != n:
            raise ContractError(f"Codebook length must be a power of two >= 2, got {n}")
        return cls(CODEBOOK, width, tuple(levels))

    @property
    def size(self) -> int:
        return 1 << self.width

    @cached_property
    def levels(self) -> np.ndarray:
        """Decoded value of every code, indexed by code."""
        if self.kind == CODEBOOK:
            return np.asarray(self.codebook, dtype=np.float64)
        codes = np.arange(self.size, dtype=np.int64)
        return np.where(codes >= self.size // 2, codes - self.size, codes).astype(np.float64)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.levels)))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind, "width": self.width}
        if self.codebook is not None:
            data["codebook"] = list(self.codebook)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuantScheme":
        unknown = set(data) - {"kind", "width", "codebook"}
        if unknown:
            raise ContractError(f"Unknown quantization keys: {sorted(unknown)}")
        codebook = data.get("codebook")
        return cls(
            data.get("kind", UNIFORM),
            int(data["width"]),
            tuple(codebook) if codebook is not None else None,
        )


def decode_operand(scheme: QuantScheme, code: int) -> float:
    """Return the real value an operand code represents.

    Raises:
        CodeRangeError: If code is outside [0, 2^W)
    """
    if not 0 <= int(code) < scheme.size:
        raise CodeRangeError(f"Code {code} out of range for a {scheme.width}-bit operand")
    return float(scheme.levels[int(code)])


def quantize(scheme: QuantScheme, x: np.ndarray) -> np.ndarray:
    """Map real values (already divided by the layer scale) to operand codes.

    Uniform schemes round to the nearest integer and saturate; codebook schemes
    pick the nearest level, lower code on ties.
    """
    x = np.asarray(x, dtype=np.float64)
    if scheme.kind == UNIFORM:
        half = scheme.size // 2
        q = np.clip(np.rint(x), -half, half - 1).astype(np.int64)
        return q & (scheme.size - 1)
    dist = np.abs(x[..., None] - scheme.levels)
    return np.argmin(dist, axis=-1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ProductTable:
    """All operand-code pairs with their exact products, code1-major ascending.

    Row k holds ``code1 = k >> W`` and ``code2 = k & (2^W - 1)``.
    """

    scheme1: QuantScheme
    scheme2: QuantScheme
    code1: np.ndarray
    code2: np.ndarray
    values: np.ndarray

    @property
    def operand_width(self) -> int:
        return self.scheme1.width

    def __len__(self) -> int:
        return len(self.values)

    @cached_property
    def operand_bits(self) -> np.ndarray:
        """Boolean matrix (rows, 2W): operand-1 bits LSB first, then operand-2 bits."""
        w = self.operand_width
        shifts = np.arange(w)
        bits1 = (self.code1[:, None] >> shifts) & 1
        bits2 = (self.code2[:, None] >> shifts) & 1
        return np.ascontiguousarray(np.hstack([bits1, bits2]).astype(bool))

    @property
    def value_grid(self) -> np.ndarray:
        """Values as a (2^W, 2^W) grid indexed by ``[code1, code2]``."""
        n = self.scheme1.size
        return self.values.reshape(n, n)

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    def describe(self) -> Dict[str, Any]:
        return {"scheme1": self.scheme1.to_dict(), "scheme2": self.scheme2.to_dict()}


def build_product_table(s1: QuantScheme, s2: QuantScheme) -> ProductTable:
    """Enumerate every operand-code pair with its exact product.

    Args:
        s1: Scheme of the first operand (weights)
        s2: Scheme of the second operand (activations)

    Returns:
        ProductTable with 2^(2W) rows

    Raises:
        ContractError: If the operand widths differ
        UnsupportedSizeError: If W > 8
    """
    if s1.width != s2.width:
        raise ContractError(f"Operand widths differ: {s1.width} vs {s2.width}")
    if s1.width > MAX_OPERAND_WIDTH:
        raise UnsupportedSizeError(
            f"Operand width {s1.width} exceeds {MAX_OPERAND_WIDTH} bits "
            f"(table would have {1 << (2 * s1.width)} rows)"
        )
    n = s1.size
    code1, code2 = np.divmod(np.arange(n * n, dtype=np.int64), n)
    # + 0.0 folds -0.0 into 0.0
    values = s1.levels[code1] * s2.levels[code2] + 0.0
    logger.info(f"Built product table: {s1.kind} x {s2.kind}, W={s1.width}, {n * n} rows")
    return ProductTable(s1, s2, code1, code2, values)


def product_table_csv(table: ProductTable) -> str:
    """Render the table as ``code1,code2,value`` CSV with MSB-first binary codes."""
    w = table.operand_width
    lines = ["code1,code2,value"]
    for c1, c2, v in zip(table.code1.tolist(), table.code2.tolist(), table.values.tolist()):
        lines.append(f"{c1:0{w}b},{c2:0{w}b},{v!r}")
    return "\n".join(lines) + "\n"
