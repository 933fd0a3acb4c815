"""Least-squares position-weight fitting, RMSE scoring and the Encoding artifact."""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import linalg

from .circuit import SampledCircuit, eval_bits, eval_circuit, reference_circuit_2bit
from .errors import ContractError
from .quant import UNIFORM, ProductTable, QuantScheme, build_product_table

logger = logging.getLogger(__name__)

# min/max squared Cholesky pivot below which the system is treated as rank deficient
PIVOT_RATIO_FLOOR = 1e-12
LSTSQ_COND = 1e-10


def fit_position_weights(
    B: np.ndarray, v: np.ndarray, l2: Optional[float] = None
) -> np.ndarray:
    """Solve ``s = argmin ||B s - v||_2`` through the normal equations.

    Cholesky is tried first. Duplicate or constant columns make B^T B
    singular; then the minimum-norm minimizer is taken from an SVD-based
    solve of the normal equations.

    Args:
        B: Bit matrix (K, M)
        v: Target values (K,)
        l2: Optional ridge strength added to the diagonal

    Returns:
        Position weights s of length M

    Raises:
        ContractError: If the row counts disagree or B has no rows
    """
    B = np.asarray(B)
    v = np.asarray(v, dtype=np.float64)
    if B.ndim != 2 or v.ndim != 1 or B.shape[0] != v.shape[0]:
        raise ContractError(f"Dimension mismatch: B {B.shape} vs v {v.shape}")
    if B.shape[0] < 1:
        raise ContractError("B must have at least one row")

    Bf = B.astype(np.float64, copy=False)
    gram = Bf.T @ Bf
    rhs = Bf.T @ v
    if l2:
        gram[np.diag_indices_from(gram)] += l2

    try:
        factor = linalg.cho_factor(gram, lower=False, check_finite=False)
        pivots = np.diag(factor[0]) ** 2
        if pivots.min() > PIVOT_RATIO_FLOOR * pivots.max():
            return linalg.cho_solve(factor, rhs, check_finite=False)
        logger.debug(f"Tiny Cholesky pivot ({pivots.min():.3g}), using min-norm solve")
    except linalg.LinAlgError:
        logger.debug("Normal equations not positive definite, using min-norm solve")

    s, *_ = linalg.lstsq(gram, rhs, cond=LSTSQ_COND, check_finite=False)
    return s


def rmse_of(B: np.ndarray, s: np.ndarray, v: np.ndarray) -> float:
    """Root mean square of ``B s - v`` over all K rows."""
    B = np.asarray(B)
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if B.shape != (v.shape[0], s.shape[0]):
        raise ContractError(f"Dimension mismatch: B {B.shape}, s {s.shape}, v {v.shape}")
    residual = B.astype(np.float64, copy=False) @ s - v
    return float(np.sqrt(np.mean(residual**2)))


def decode_value(bits: Sequence[int], s: Sequence[float]) -> float:
    """Return ``sum_j s_j * b_j``, correctly rounded.

    Raises:
        ContractError: If bits and s differ in length
    """
    if len(bits) != len(s):
        raise ContractError(f"Length mismatch: {len(bits)} bits vs {len(s)} weights")
    return math.fsum(float(w) * int(b) for b, w in zip(bits, s)) + 0.0


@dataclass(frozen=True, eq=False)
class Encoding:
    """A sampled circuit with fitted position weights and its RMSE.

    ``scheme1``/``scheme2`` describe the operands the encoding was fitted for;
    ``seed`` and ``sample_index`` record where the circuit came from.
    """

    circuit: SampledCircuit
    weights: np.ndarray
    rmse: float
    scheme1: QuantScheme
    scheme2: QuantScheme
    seed: Optional[int] = None
    sample_index: Optional[int] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).copy()
        if weights.shape != (self.circuit.output_width,):
            raise ContractError(
                f"{weights.shape[0] if weights.ndim else 0} weights for "
                f"{self.circuit.output_width} output bits"
            )
        if not np.all(np.isfinite(weights)):
            raise ContractError("Position weights must be finite")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        if self.scheme1.width != self.circuit.operand_width:
            raise ContractError("Encoding schemes and circuit disagree on operand width")

    @property
    def output_width(self) -> int:
        return self.circuit.output_width

    @property
    def operand_width(self) -> int:
        return self.circuit.operand_width

    @cached_property
    def table(self) -> ProductTable:
        return build_product_table(self.scheme1, self.scheme2)

    @cached_property
    def bits_table(self) -> np.ndarray:
        """Circuit output for every code pair, uint8 (2^W, 2^W, M)."""
        n = self.scheme1.size
        bits = eval_bits(self.circuit.gates, self.table.operand_bits)
        return np.ascontiguousarray(bits.view(np.uint8).reshape(n, n, self.output_width))

    @cached_property
    def value_lut(self) -> np.ndarray:
        """Decoded value for every code pair, float64 (2^W, 2^W)."""
        n = self.scheme1.size
        weights = self.weights.tolist()
        flat = [decode_value(row, weights) for row in self.bits_table.reshape(n * n, -1).tolist()]
        return np.asarray(flat, dtype=np.float64).reshape(n, n)

    def with_weights(self, weights: np.ndarray) -> "Encoding":
        """Copy with new position weights and a recomputed RMSE; circuit unchanged."""
        table = self.table
        B = eval_circuit(self.circuit, table)
        return Encoding(
            self.circuit,
            weights,
            rmse_of(B, weights, table.values),
            self.scheme1,
            self.scheme2,
            self.seed,
            self.sample_index,
            dict(self.extra),
        )

    def describe(self) -> Dict[str, Any]:
        return {
            "scheme1": self.scheme1.to_dict(),
            "scheme2": self.scheme2.to_dict(),
        }

    def to_dict(self) -> Dict[str, Any]:
        n = self.scheme1.size
        data = {
            "circuit": self.circuit.to_dict(),
            "weights": [float(w) for w in self.weights],
            "rmse": float(self.rmse),
            "operand_scheme": self.describe(),
            "seed": self.seed,
            "sample_index": self.sample_index,
            "created_for": {
                "operand_width": self.operand_width,
                "table_rows": n * n,
                "kinds": [self.scheme1.kind, self.scheme2.kind],
            },
        }
        if self.extra:
            data["extra"] = dict(self.extra)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Encoding":
        schemes = data["operand_scheme"]
        return cls(
            SampledCircuit.from_dict(data["circuit"]),
            np.asarray(data["weights"], dtype=np.float64),
            float(data["rmse"]),
            QuantScheme.from_dict(schemes["scheme1"]),
            QuantScheme.from_dict(schemes["scheme2"]),
            data.get("seed"),
            data.get("sample_index"),
            dict(data.get("extra", {})),
        )


def fit_encoding(
    circuit: SampledCircuit,
    table: ProductTable,
    seed: Optional[int] = None,
    sample_index: Optional[int] = None,
) -> Encoding:
    """Evaluate a circuit on the table, fit its weights and score it."""
    B = eval_circuit(circuit, table)
    s = fit_position_weights(B, table.values)
    return Encoding(
        circuit, s, rmse_of(B, s, table.values), table.scheme1, table.scheme2, seed, sample_index
    )


def recompute_rmse(encoding: Encoding, table: Optional[ProductTable] = None) -> float:
    table = table or encoding.table
    return rmse_of(eval_circuit(encoding.circuit, table), encoding.weights, table.values)


def twos_complement_bits(table: ProductTable) -> np.ndarray:
    """Traditional 2W-bit two's-complement product bits, uint8 (K, 2W), LSB first.

    Raises:
        ContractError: If either operand scheme is not uniform
    """
    if table.scheme1.kind != UNIFORM or table.scheme2.kind != UNIFORM:
        raise ContractError("Two's-complement product bits need uniform operands")
    width = 2 * table.operand_width
    products = table.values.astype(np.int64) & ((1 << width) - 1)
    return ((products[:, None] >> np.arange(width)) & 1).astype(np.uint8)


def twos_complement_weights(width: int) -> np.ndarray:
    """Position weights of a ``width``-bit two's-complement number, LSB first."""
    weights = 2.0 ** np.arange(width)
    weights[-1] = -weights[-1]
    return weights


def reference_encoding_2bit() -> Encoding:
    """Zero-error 5-bit encoding of the signed 2-bit multiplier."""
    scheme = QuantScheme.uniform(2)
    return Encoding(
        reference_circuit_2bit(),
        np.array([1.0, -1.0, 2.0, 2.0, -4.0]),
        0.0,
        scheme,
        scheme,
    )
