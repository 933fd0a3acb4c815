"""Clocked simulation of the encoding-based MAC array and the systolic baseline.

Both arrays hold an N x N weight block (row r, column c). Input matrices are
streamed one activation vector per cycle; vector t of matrix k is row t of
that matrix, element r feeding array row r.

Encoding-based array: activations shift across columns through the input
flip-flops, every row of a column sees the vector in the same cycle, and the
column's bit-wise accumulators and decoder produce the result within that
cycle. Traditional array: additionally skewed by one cycle per row, with
partial sums registered between rows.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .circuit import gate_count
from .errors import CodeRangeError, ContractError
from .fit import Encoding, decode_value
from .quant import UNIFORM, QuantScheme

logger = logging.getLogger(__name__)

# gate count of a conventional 8-bit signed array multiplier
TRADITIONAL_MULTIPLIER_GATES = 417


def encoded_multiply(encoding: Encoding, code1: int, code2: int):
    """Run the encoded multiplier on one operand pair.

    Returns:
        Tuple of (output bits LSB first as uint8 array, decoded value)
    """
    n = encoding.scheme1.size
    if not (0 <= code1 < n and 0 <= code2 < n):
        raise CodeRangeError(f"Codes ({code1}, {code2}) out of range for {encoding.operand_width} bits")
    bits = encoding.bits_table[code1, code2].copy()
    return bits, decode_value(bits.tolist(), encoding.weights.tolist())


def decode_counts(counts: Sequence[int], s: Sequence[float]) -> float:
    """Decoder: ``sum_j s_j * c_j`` for non-negative integer bit counts.

    Each count is split into powers of two so every term is exact, and the
    terms are summed with correct rounding. The result therefore equals the
    correctly rounded sum of the per-product decoded terms.
    """
    terms = []
    for weight, count in zip(s, counts):
        count = int(count)
        shift = 0
        while count:
            if count & 1:
                terms.append(math.ldexp(weight, shift))
            count >>= 1
            shift += 1
    return math.fsum(terms) + 0.0


def per_product_sum(bit_rows: np.ndarray, s: Sequence[float]) -> float:
    """Reference sum over products of their decoded terms, correctly rounded."""
    weights = list(s)
    return math.fsum(weights[j] for row in np.asarray(bit_rows).tolist() for j, b in enumerate(row) if b) + 0.0


def column_counts(encoding: Encoding, weight_codes, activation_codes) -> np.ndarray:
    """Bit-wise accumulation: count of set bits per output position over the column."""
    weight_codes = np.asarray(weight_codes, dtype=np.int64)
    activation_codes = np.asarray(activation_codes, dtype=np.int64)
    if weight_codes.shape != activation_codes.shape or weight_codes.ndim != 1:
        raise ContractError(
            f"Weight and activation vectors differ: {weight_codes.shape} vs {activation_codes.shape}"
        )
    bits = encoding.bits_table[weight_codes, activation_codes]
    return bits.sum(axis=0, dtype=np.int64)


def column_mac(encoding: Encoding, weight_codes, activation_codes) -> float:
    """One array column: accumulate bit counts, then decode once."""
    counts = column_counts(encoding, weight_codes, activation_codes)
    return decode_counts(counts.tolist(), encoding.weights.tolist())


@dataclass
class ArrayConfig:
    """N x N array settings.

    ``encoding`` None selects the exact (traditional) multiplier; the operand
    schemes then come from ``weight_scheme``/``act_scheme``.
    """

    N: int
    encoding: Optional[Encoding] = None
    clock_period: float = 1.0
    accumulator_width: Optional[int] = None
    weight_scheme: Optional[QuantScheme] = None
    act_scheme: Optional[QuantScheme] = None

    def __post_init__(self):
        if self.N < 1:
            raise ContractError(f"Array size must be >= 1, got {self.N}")
        if not self.clock_period > 0:
            raise ContractError(f"Clock period must be positive, got {self.clock_period}")
        minimum = math.ceil(math.log2(self.N + 1))
        if self.accumulator_width is None:
            self.accumulator_width = minimum
        elif self.accumulator_width < minimum:
            raise ContractError(
                f"Accumulator width {self.accumulator_width} cannot count {self.N} addends"
            )
        if self.encoding is not None:
            self.weight_scheme = self.weight_scheme or self.encoding.scheme1
            self.act_scheme = self.act_scheme or self.encoding.scheme2
        else:
            self.weight_scheme = self.weight_scheme or QuantScheme.uniform(8)
            self.act_scheme = self.act_scheme or self.weight_scheme
        if self.weight_scheme.width != self.act_scheme.width:
            raise ContractError("Weight and activation schemes differ in width")


@dataclass
class ArraySimReport:
    outputs: Optional[np.ndarray]
    latency_cycles: int
    total_cycles: int
    matrices: int
    clock_period: float
    bit_count_histograms: Optional[np.ndarray] = None
    max_counter: int = 0
    cost: Dict[str, Any] = field(default_factory=dict)

    @property
    def latency(self) -> float:
        return self.latency_cycles * self.clock_period

    @property
    def throughput(self) -> float:
        """Input matrices completed per time unit."""
        return self.matrices / (self.total_cycles * self.clock_period)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "latency_cycles": self.latency_cycles,
            "latency": self.latency,
            "total_cycles": self.total_cycles,
            "matrices": self.matrices,
            "clock_period": self.clock_period,
            "throughput": self.throughput,
            "max_counter": self.max_counter,
            "cost": dict(self.cost),
        }


def encoded_latency_cycles(N: int, m: int = 1) -> int:
    return (2 * N - 1) + N * (m - 1)


def traditional_latency_cycles(N: int, m: int = 1) -> int:
    return (3 * N - 2) + N * (m - 1)


def _check_shapes(N: int, Wmat: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    Wmat = np.asarray(Wmat, dtype=np.int64)
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    if Wmat.shape != (N, N):
        raise ContractError(f"Weight block must be {N}x{N}, got {Wmat.shape}")
    if inputs.ndim != 3 or inputs.shape[1:] != (N, N) or inputs.shape[0] < 1:
        raise ContractError(f"Inputs must be m x {N} x {N}, got {inputs.shape}")
    return inputs


def _check_codes(scheme: QuantScheme, codes: np.ndarray, what: str) -> None:
    if codes.size and (codes.min() < 0 or codes.max() >= scheme.size):
        raise ContractError(f"{what} codes out of range for {scheme.width} bits")


def simulate_encoded_array(
    cfg: ArrayConfig, Wmat, inputs, functional: bool = True
) -> ArraySimReport:
    """Cycle-level run of the encoding-based array.

    Vector t enters column 0 at cycle t and column c at cycle t + c; the
    column result is complete at the end of that cycle.

    Args:
        cfg: Array settings; cfg.encoding must be set
        Wmat: N x N weight codes
        inputs: m x N x N activation codes (or one N x N matrix)
        functional: Compute output values (cycle accounting always runs)
    """
    if cfg.encoding is None:
        raise ContractError("Encoded array simulation needs an encoding")
    N, encoding = cfg.N, cfg.encoding
    inputs = _check_shapes(N, Wmat, inputs)
    Wmat = np.asarray(Wmat, dtype=np.int64)
    _check_codes(cfg.weight_scheme, Wmat, "Weight")
    _check_codes(cfg.act_scheme, inputs, "Activation")
    m = inputs.shape[0]
    vectors = inputs.reshape(m * N, N)
    weights = encoding.weights.tolist()
    M = encoding.output_width

    outputs = np.zeros((m * N, N)) if functional else None
    histograms = np.zeros((N, N + 1), dtype=np.int64) if functional else None
    max_counter = 0
    # token register per column: vector index held by that column's input flip-flops
    held = np.full(N, -1, dtype=np.int64)
    done = np.zeros(m, dtype=np.int64)
    first_done: Optional[int] = None
    cycle = 0
    total = m * N

    while done.sum() < N * total:
        held[1:] = held[:-1]
        held[0] = cycle if cycle < total else -1
        cycle += 1
        active = np.nonzero(held >= 0)[0]
        if functional and active.size:
            tokens = held[active]
            # counts[col, j]: bit-wise accumulators at the bottom of each active column
            bits = encoding.bits_table[Wmat[:, active], vectors[tokens].T]
            counts = bits.sum(axis=0, dtype=np.int64)
            max_counter = max(max_counter, int(counts.max()))
            for col, token, row in zip(active.tolist(), tokens.tolist(), counts.tolist()):
                outputs[token, col] = decode_counts(row, weights)
                histograms[col] += np.bincount(row, minlength=N + 1)
        np.add.at(done, held[active] // N, 1)
        if first_done is None and done[0] == N * N:
            first_done = cycle

    logger.debug(f"Encoded array N={N}, m={m}: first result at {first_done}, done at {cycle}")
    return ArraySimReport(
        outputs.reshape(m, N, N) if functional else None,
        first_done,
        cycle,
        m,
        cfg.clock_period,
        histograms,
        max_counter,
        array_cost_proxy(cfg),
    )


def simulate_traditional_array(
    cfg: ArrayConfig, Wmat, inputs, functional: bool = True
) -> ArraySimReport:
    """Cycle-level run of the weight-stationary systolic baseline.

    Row r receives vector t at cycle t + r, activations shift one column per
    cycle and partial sums move down one row per cycle, so the result for
    (t, c) leaves the bottom row at the end of cycle t + (N - 1) + c.
    Multiplication is exact on the decoded operands.
    """
    N = cfg.N
    inputs = _check_shapes(N, Wmat, inputs)
    Wmat = np.asarray(Wmat, dtype=np.int64)
    _check_codes(cfg.weight_scheme, Wmat, "Weight")
    _check_codes(cfg.act_scheme, inputs, "Activation")
    m = inputs.shape[0]
    total = m * N
    exact_ints = cfg.weight_scheme.kind == UNIFORM and cfg.act_scheme.kind == UNIFORM
    dtype = np.int64 if exact_ints else np.float64
    w_vals = cfg.weight_scheme.levels[Wmat].astype(dtype)
    a_vals = cfg.act_scheme.levels[inputs.reshape(total, N)].astype(dtype)

    rows = np.arange(N)
    act_token = np.full((N, N), -1, dtype=np.int64)
    psum = np.zeros((N, N), dtype=dtype)
    outputs = np.zeros((total, N), dtype=dtype) if functional else None
    done = np.zeros(m, dtype=np.int64)
    first_done: Optional[int] = None
    cycle = 0

    while done.sum() < N * total:
        act_token[:, 1:] = act_token[:, :-1]
        entering = cycle - rows
        act_token[:, 0] = np.where((entering >= 0) & (entering < total), entering, -1)
        cycle += 1
        valid = act_token >= 0
        if functional:
            above = np.vstack([np.zeros((1, N), dtype=dtype), psum[:-1]])
            acts = np.where(valid, a_vals[np.maximum(act_token, 0), rows[:, None]], 0)
            psum = above + w_vals * acts
        bottom = np.nonzero(valid[-1])[0]
        if bottom.size:
            tokens = act_token[-1, bottom]
            if functional:
                outputs[tokens, bottom] = psum[-1, bottom]
            np.add.at(done, tokens // N, 1)
        if first_done is None and done[0] == N * N:
            first_done = cycle

    logger.debug(f"Traditional array N={N}, m={m}: first result at {first_done}, done at {cycle}")
    return ArraySimReport(
        outputs.reshape(m, N, N) if functional else None,
        first_done,
        cycle,
        m,
        cfg.clock_period,
        cost=array_cost_proxy(ArrayConfig(N, None, cfg.clock_period, None, cfg.weight_scheme, cfg.act_scheme)),
    )


def traditional_multiplier_gates(operand_width: int) -> int:
    """417 gates at 8 bits, scaled quadratically for other widths."""
    return round(TRADITIONAL_MULTIPLIER_GATES * (operand_width / 8) ** 2)


def array_cost_proxy(cfg: ArrayConfig) -> Dict[str, int]:
    """Gate-count stand-in for area/power.

    Encoded: N^2 multipliers of gate_count(circuit) gates, one counter of
    accumulator_width bits per output bit per column, and per column a decoder
    of M weight multiplies plus M - 1 adds. Traditional: N^2 conventional
    multipliers and a partial-sum register per MAC, no decoder.
    """
    N = cfg.N
    if cfg.encoding is None:
        W = cfg.weight_scheme.width
        return {
            "multiplier_gates_total": N * N * traditional_multiplier_gates(W),
            "accumulator_bits": N * N * (2 * W + math.ceil(math.log2(N))),
            "decoder_ops": 0,
        }
    M = cfg.encoding.output_width
    return {
        "multiplier_gates_total": N * N * gate_count(cfg.encoding.circuit).total,
        "accumulator_bits": N * M * cfg.accumulator_width,
        "decoder_ops": N * (M + M - 1),
    }

