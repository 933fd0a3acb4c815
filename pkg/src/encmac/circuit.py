"""Single-level gate library, random circuit sampling and bit-exact evaluation.

Input index convention: indices 0..W-1 address operand-1 bits LSB first,
W..2W-1 address operand-2 bits LSB first. Gate j drives output bit b_j.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterator, Sequence, Tuple

import numpy as np

from .errors import ContractError, UnsupportedSizeError
from .quant import MAX_OPERAND_WIDTH, ProductTable

logger = logging.getLogger(__name__)


class GateKind(Enum):
    SET = "SET"
    IN = "IN"
    NOT = "NOT"
    AND2 = "AND2"
    OR2 = "OR2"
    NAND2 = "NAND2"
    NAND3 = "NAND3"
    XOR3 = "XOR3"

    @property
    def arity(self) -> int:
        return _ARITY[self]

    @property
    def is_physical(self) -> bool:
        """SET is a tie-high and IN a wire; neither synthesizes to a gate."""
        return self not in (GateKind.SET, GateKind.IN)


_ARITY = {
    GateKind.SET: 0,
    GateKind.IN: 1,
    GateKind.NOT: 1,
    GateKind.AND2: 2,
    GateKind.OR2: 2,
    GateKind.NAND2: 2,
    GateKind.NAND3: 3,
    GateKind.XOR3: 3,
}
GATE_KINDS: Tuple[GateKind, ...] = tuple(GateKind)
MAX_ARITY = 3


@dataclass(frozen=True)
class GateSpec:
    kind: GateKind
    inputs: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        if len(self.inputs) != self.kind.arity:
            raise ContractError(
                f"{self.kind.value} takes {self.kind.arity} inputs, got {len(self.inputs)}"
            )
        if any(i < 0 for i in self.inputs):
            raise ContractError(f"Negative input index in {self}")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "inputs": list(self.inputs)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GateSpec":
        return cls(GateKind(data["kind"]), tuple(data.get("inputs", ())))


@dataclass(frozen=True)
class SampledCircuit:
    operand_width: int
    output_width: int
    gates: Tuple[GateSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if len(self.gates) != self.output_width:
            raise ContractError(
                f"Circuit declares {self.output_width} outputs but has {len(self.gates)} gates"
            )
        limit = 2 * self.operand_width
        for gate in self.gates:
            if any(i >= limit for i in gate.inputs):
                raise ContractError(f"{gate} reads beyond the {limit} operand bits")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "operand_width": self.operand_width,
            "output_width": self.output_width,
            "gates": [g.to_dict() for g in self.gates],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SampledCircuit":
        return cls(
            int(data["operand_width"]),
            int(data["output_width"]),
            tuple(GateSpec.from_dict(g) for g in data["gates"]),
        )


@dataclass(frozen=True)
class GateCount:
    per_kind: Dict[str, int]
    total: int


def sample_circuit(rng: np.random.Generator, W: int, M: int) -> SampledCircuit:
    """Draw M gates with uniform kinds and uniform, independent input indices.

    Repeated inputs within a gate are allowed. Deterministic given the
    generator state.
    """
    if not 1 <= W <= MAX_OPERAND_WIDTH:
        raise UnsupportedSizeError(f"Operand width must be in [1, {MAX_OPERAND_WIDTH}], got {W}")
    if M < 1:
        raise ContractError(f"Output width must be >= 1, got {M}")
    kinds = rng.integers(0, len(GATE_KINDS), size=M)
    inputs = rng.integers(0, 2 * W, size=(M, MAX_ARITY))
    gates = tuple(
        GateSpec(GATE_KINDS[k], tuple(inputs[j, : GATE_KINDS[k].arity].tolist()))
        for j, k in enumerate(kinds.tolist())
    )
    return SampledCircuit(W, M, gates)


def _apply(kind: GateKind, operands: Sequence[np.ndarray], shape) -> np.ndarray:
    if kind is GateKind.SET:
        return np.ones(shape, dtype=bool)
    if kind is GateKind.IN:
        return operands[0].copy()
    if kind is GateKind.NOT:
        return ~operands[0]
    if kind is GateKind.AND2:
        return operands[0] & operands[1]
    if kind is GateKind.OR2:
        return operands[0] | operands[1]
    if kind is GateKind.NAND2:
        return ~(operands[0] & operands[1])
    if kind is GateKind.NAND3:
        return ~(operands[0] & operands[1] & operands[2])
    return operands[0] ^ operands[1] ^ operands[2]


def eval_gate(g: GateSpec, operand_bits: Sequence[int]) -> int:
    """Evaluate one gate on a single operand bit vector of length 2W."""
    bits = np.asarray(operand_bits, dtype=bool)
    if bits.ndim != 1 or bits.size % 2:
        raise ContractError(f"Operand bits must be a vector of length 2W, got shape {bits.shape}")
    if any(i >= bits.size for i in g.inputs):
        raise ContractError(f"{g} reads beyond {bits.size} operand bits")
    return int(_apply(g.kind, [bits[i] for i in g.inputs], ()))


def eval_bits(gates: Sequence[GateSpec], operand_bits: np.ndarray) -> np.ndarray:
    """Evaluate gates over a boolean (rows, 2W) matrix; returns bool (rows, M)."""
    rows = operand_bits.shape[0]
    out = np.empty((rows, len(gates)), dtype=bool, order="F")
    for j, gate in enumerate(gates):
        out[:, j] = _apply(gate.kind, [operand_bits[:, i] for i in gate.inputs], rows)
    return out


def eval_circuit(c: SampledCircuit, table: ProductTable) -> np.ndarray:
    """Return the bit matrix B as uint8 (2^(2W), M), rows in table order.

    Raises:
        ContractError: If the circuit and table operand widths differ
    """
    if c.operand_width != table.operand_width:
        raise ContractError(
            f"Circuit operand width {c.operand_width} != table width {table.operand_width}"
        )
    return eval_bits(c.gates, table.operand_bits).view(np.uint8)


def gate_count(c: SampledCircuit) -> GateCount:
    """Count gates per kind; the total leaves out SET and IN."""
    per_kind = {kind.value: 0 for kind in GATE_KINDS}
    for gate in c.gates:
        per_kind[gate.kind.value] += 1
    total = sum(n for kind, n in per_kind.items() if GateKind(kind).is_physical)
    return GateCount(per_kind, total)


def enumerate_gate_specs(W: int) -> Iterator[GateSpec]:
    """Every (kind, inputs) choice of the single-level gate space for width W."""
    for kind in GATE_KINDS:
        for inputs in itertools.product(range(2 * W), repeat=kind.arity):
            yield GateSpec(kind, inputs)


def reference_circuit_2bit() -> SampledCircuit:
    """Hand-built 5-output single-level multiplier for signed 2-bit operands.

    Exact with position weights (1, -1, 2, 2, -4), LSB first.
    """
    x0, x1, y0, y1 = 0, 1, 2, 3
    return SampledCircuit(
        2,
        5,
        (
            GateSpec(GateKind.SET),
            GateSpec(GateKind.NAND2, (x0, y0)),
            GateSpec(GateKind.NAND2, (x0, y1)),
            GateSpec(GateKind.NAND2, (x1, y0)),
            GateSpec(GateKind.NAND2, (x1, y1)),
        ),
    )
