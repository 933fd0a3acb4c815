"""Best-of-N circuit sampling and the binary search over output bit width."""

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import seeding
from .circuit import (
    SampledCircuit,
    enumerate_gate_specs,
    eval_bits,
    eval_circuit,
    gate_count,
    sample_circuit,
)
from .errors import CalibrationFailedError, ContractError, TargetUnreachableError
from .fit import Encoding, fit_encoding, fit_position_weights, rmse_of
from .quant import MAX_OPERAND_WIDTH, ProductTable

logger = logging.getLogger(__name__)

# fits within this fraction of the table scale count as exact
EXACT_RMSE = 1e-12

# default target RMSE as a fraction of the table RMS
DEFAULT_TARGET_FRACTION = 0.375


@dataclass(frozen=True)
class SearchConfig:
    """Sampling budget, stopping rule, width bounds and target.

    ``min_width``/``max_width`` left as None resolve per operand width:
    (16, 128) for 8-bit operands, (4W, 32W) below that.
    """

    max_samples: int = 10_000
    window: int = 1000
    epsilon: float = 0.005
    min_width: Optional[int] = None
    max_width: Optional[int] = None
    target_rmse: Optional[float] = None
    seed: int = 0
    chunk_size: int = 256

    def __post_init__(self):
        if self.max_samples < 1:
            raise ContractError(f"max_samples must be >= 1, got {self.max_samples}")
        if self.window < 1:
            raise ContractError(f"window must be >= 1, got {self.window}")
        if self.epsilon < 0:
            raise ContractError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.chunk_size < 1:
            raise ContractError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.min_width is not None and self.min_width < 1:
            raise ContractError(f"min_width must be >= 1, got {self.min_width}")
        if (
            self.min_width is not None
            and self.max_width is not None
            and self.min_width > self.max_width
        ):
            raise ContractError(f"min_width {self.min_width} > max_width {self.max_width}")

    def width_bounds(self, operand_width: int) -> Tuple[int, int]:
        if operand_width >= MAX_OPERAND_WIDTH:
            lo, hi = 16, 128
        else:
            lo, hi = 4 * operand_width, 32 * operand_width
        lo = self.min_width if self.min_width is not None else lo
        hi = self.max_width if self.max_width is not None else hi
        if lo > hi:
            raise ContractError(f"Resolved width bounds are inverted: ({lo}, {hi})")
        return lo, hi


@dataclass
class SearchTrace:
    """What a search saw: best-so-far RMSE per sample and best RMSE per probed width."""

    best_rmse_series: List[float] = field(default_factory=list)
    width_best: Dict[int, float] = field(default_factory=dict)
    chosen_width: Optional[int] = None
    samples_evaluated: int = 0
    wall_time: float = 0.0


class _Sample(NamedTuple):
    index: int
    circuit: SampledCircuit
    weights: np.ndarray
    rmse: float
    gates: int

    @property
    def key(self) -> Tuple[float, int, int]:
        # lower RMSE, then fewer physical gates, then earlier sample
        return (self.rmse, self.gates, self.index)


def _evaluate_sample(table: ProductTable, seed: int, width: int, index: int) -> _Sample:
    rng = seeding.derive_rng(seed, seeding.SEARCH, width, index)
    circuit = sample_circuit(rng, table.operand_width, width)
    B = eval_circuit(circuit, table)
    s = fit_position_weights(B, table.values)
    return _Sample(index, circuit, s, rmse_of(B, s, table.values), gate_count(circuit).total)


_worker_table: Optional[ProductTable] = None


def _init_worker(table: ProductTable) -> None:
    global _worker_table
    _worker_table = table


def _worker_evaluate(args: Tuple[int, int, int]) -> _Sample:
    return _evaluate_sample(_worker_table, *args)


@contextmanager
def _sample_pool(table: ProductTable, jobs: int) -> Iterator[Optional[ProcessPoolExecutor]]:
    if jobs <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(table,)) as pool:
        yield pool


def _is_stable(series: List[float], window: int, epsilon: float, exact: float = 0.0) -> bool:
    best = series[-1]
    if best <= exact:
        return True
    if len(series) <= window:
        return False
    previous = series[-1 - window]
    return previous - best < epsilon * previous


def sample_search(
    table: ProductTable, M: int, cfg: SearchConfig, jobs: int = 1
) -> Tuple[Encoding, SearchTrace]:
    """Sample circuits of output width M in seed order and keep the best.

    Sample i draws from sub-seed (cfg.seed, width M, i). Results are reduced
    in index order, so the outcome does not depend on ``jobs``. Sampling stops
    once the best RMSE is exact (within ``EXACT_RMSE`` of the table scale),
    once it improved by less than ``epsilon`` (relative) over the last
    ``window`` samples, or after ``max_samples``.

    Returns:
        Minimum-RMSE encoding and the search trace
    """
    if M < 1:
        raise ContractError(f"Output width must be >= 1, got {M}")
    started = time.perf_counter()
    best: Optional[_Sample] = None
    series: List[float] = []
    stopped = False
    exact = EXACT_RMSE * max(table.rms, 1.0)

    with _sample_pool(table, jobs) as pool:
        for start in range(0, cfg.max_samples, cfg.chunk_size):
            indices = range(start, min(start + cfg.chunk_size, cfg.max_samples))
            if pool is None:
                results = (_evaluate_sample(table, cfg.seed, M, i) for i in indices)
            else:
                args = [(cfg.seed, M, i) for i in indices]
                results = pool.map(_worker_evaluate, args, chunksize=max(1, len(args) // (4 * jobs)))
            for sample in results:
                if best is None or sample.key < best.key:
                    best = sample
                series.append(best.rmse)
                if _is_stable(series, cfg.window, cfg.epsilon, exact):
                    stopped = True
                    break
            if stopped:
                break

    elapsed = time.perf_counter() - started
    logger.info(
        f"M={M}: best RMSE {best.rmse:.6g} at sample {best.index} "
        f"after {len(series)} samples ({elapsed:.1f}s{', stable' if stopped else ''})"
    )
    encoding = Encoding(
        best.circuit, best.weights, best.rmse, table.scheme1, table.scheme2, cfg.seed, best.index
    )
    trace = SearchTrace(series, {M: best.rmse}, M, len(series), elapsed)
    return encoding, trace


def width_binary_search(
    table: ProductTable, cfg: SearchConfig, jobs: int = 1
) -> Tuple[Encoding, SearchTrace]:
    """Find the smallest output width whose sampled best meets the target RMSE.

    Classic bisection on [min_width, max_width]: probe mid, move ``lo`` up
    when the best RMSE misses the target and ``hi`` down otherwise, until
    ``hi - lo <= 1``. Each probe samples independently.

    Raises:
        ContractError: If no positive target RMSE is configured
        TargetUnreachableError: If the widest width misses the target
    """
    target = cfg.target_rmse
    if target is None or not target > 0:
        raise ContractError(f"A positive target RMSE is required, got {target}")
    min_width, max_width = cfg.width_bounds(table.operand_width)
    lo, hi = min_width, max_width
    started = time.perf_counter()
    probes: Dict[int, Tuple[Encoding, SearchTrace]] = {}

    def probe(width: int) -> Encoding:
        logger.info(f"Probing output width {width} (bounds {lo}..{hi})")
        probes[width] = sample_search(table, width, cfg, jobs=jobs)
        return probes[width][0]

    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid).rmse > target:
            lo = mid
        else:
            hi = mid
    if hi not in probes:
        probe(hi)
    chosen = hi
    if lo == min_width and lo != hi:
        if lo not in probes:
            probe(lo)
        if probes[lo][0].rmse <= target:
            chosen = lo

    encoding, chosen_trace = probes[chosen]
    trace = SearchTrace(
        list(chosen_trace.best_rmse_series),
        {w: t.width_best[w] for w, (_, t) in probes.items()},
        chosen,
        sum(t.samples_evaluated for _, t in probes.values()),
        time.perf_counter() - started,
    )
    if encoding.rmse > target:
        best = min((e for e, _ in probes.values()), key=lambda e: (e.rmse, e.output_width))
        logger.error(f"Target RMSE {target:.6g} unreachable; best {best.rmse:.6g} at M={best.output_width}")
        raise TargetUnreachableError(
            f"Target RMSE {target:.6g} not met up to width {max_width}", best, trace
        )
    logger.info(f"Chosen output width {chosen} with RMSE {encoding.rmse:.6g}")
    return encoding, trace


def exhaustive_search(table: ProductTable, M: int, chunk: int = 20_000) -> Encoding:
    """Enumerate M-subsets of the distinct single-level gate columns.

    Only practical for W <= 2. Returns the first zero-error encoding found,
    otherwise the best one.
    """
    if table.operand_width > 2:
        raise ContractError("Exhaustive search is limited to operand widths <= 2")
    specs = list(enumerate_gate_specs(table.operand_width))
    columns = eval_bits(specs, table.operand_bits)
    _, first = np.unique(columns, axis=1, return_index=True)
    first = np.sort(first)
    specs = [specs[i] for i in first]
    columns = columns[:, first].astype(np.float64)
    v = table.values
    logger.info(f"Exhaustive search over C({len(specs)}, {M}) gate-column subsets")

    best_rmse, best_combo = np.inf, None
    combos = itertools.combinations(range(len(specs)), M)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        Bs = np.transpose(columns[:, block], (1, 0, 2))
        s = np.einsum("cmk,k->cm", np.linalg.pinv(Bs), v)
        residual = np.einsum("ckm,cm->ck", Bs, s) - v
        rmse = np.sqrt(np.mean(residual**2, axis=1))
        i = int(np.argmin(rmse))
        if rmse[i] < best_rmse:
            best_rmse, best_combo = float(rmse[i]), block[i]
        if best_rmse < 1e-9:
            break

    circuit = SampledCircuit(table.operand_width, M, tuple(specs[i] for i in best_combo))
    return fit_encoding(circuit, table)


def sweep_widths(
    table: ProductTable, widths: Sequence[int], cfg: SearchConfig, jobs: int = 1
) -> List[Tuple[int, Encoding, SearchTrace]]:
    """Run sample_search at each width (RMSE-vs-bit-width curve)."""
    results = []
    for width in widths:
        encoding, trace = sample_search(table, width, cfg, jobs=jobs)
        results.append((width, encoding, trace))
    return results


def evaluate_rmse_grid(
    table: ProductTable,
    evaluate: Callable[[Encoding], float],
    rmse_grid: Sequence[float],
    cfg: Optional[SearchConfig] = None,
    encoding_for: Optional[Callable[[float], Encoding]] = None,
    jobs: int = 1,
) -> List[Tuple[float, float]]:
    """Accuracy reached by an encoding searched for each grid RMSE, ascending."""
    if not rmse_grid:
        raise ContractError("RMSE grid is empty")
    cfg = cfg or SearchConfig()

    def searched(target: float) -> Encoding:
        try:
            return width_binary_search(table, replace(cfg, target_rmse=target), jobs=jobs)[0]
        except TargetUnreachableError as e:
            logger.warning(f"Grid RMSE {target:.6g} unreachable, using best effort")
            return e.encoding

    encoding_for = encoding_for or searched
    points = []
    for target in sorted(float(r) for r in rmse_grid):
        accuracy = float(evaluate(encoding_for(target)))
        logger.info(f"Grid RMSE {target:.6g}: accuracy {accuracy:.4f}")
        points.append((target, accuracy))
    return points


def accuracy_rises(points: Sequence[Tuple[float, float]], tolerance: float = 0.0) -> List[float]:
    """Grid RMSEs whose accuracy beats a smaller grid RMSE by more than ``tolerance``."""
    rises = []
    lowest = float("inf")
    for rmse, accuracy in sorted(points):
        if accuracy > lowest + tolerance:
            rises.append(rmse)
        lowest = min(lowest, accuracy)
    return rises


def calibrate_target_rmse(
    table: ProductTable,
    evaluate: Callable[[Encoding], float],
    rmse_grid: Sequence[float],
    exact_accuracy: float,
    max_drop: float = 0.01,
    cfg: Optional[SearchConfig] = None,
    encoding_for: Optional[Callable[[float], Encoding]] = None,
    jobs: int = 1,
) -> float:
    """Pick the largest grid RMSE whose accuracy drop stays below ``max_drop``.

    Args:
        table: Product table to search encodings for
        evaluate: Maps an encoding to model accuracy
        rmse_grid: Candidate target RMSEs
        exact_accuracy: Accuracy with exact multiplication
        max_drop: Largest tolerated accuracy drop (fraction)
        cfg: Search settings for the per-point width search
        encoding_for: Overrides how an encoding is obtained for a grid RMSE

    Raises:
        ContractError: If the grid is empty
        CalibrationFailedError: If no grid point keeps accuracy
    """
    points = evaluate_rmse_grid(table, evaluate, rmse_grid, cfg, encoding_for, jobs)
    rises = accuracy_rises(points)
    if rises:
        logger.warning(f"Accuracy is not monotone in RMSE; it rises at grid points {rises}")
    kept = [rmse for rmse, accuracy in points if exact_accuracy - accuracy < max_drop]
    if not kept:
        raise CalibrationFailedError(
            f"No grid RMSE keeps the accuracy drop under {max_drop}: {points}"
        )
    return max(kept)


def relative_target(table: ProductTable, fraction: float) -> float:
    """Target RMSE as a fraction of the table's RMS product value.

    An all-zero table has no scale, so the fraction is used as is.
    """
    rms = table.rms
    return fraction * rms if rms > 0 else fraction


def samples_csv(trace: SearchTrace) -> str:
    lines = ["sample_index,best_rmse"]
    lines += [f"{i},{r!r}" for i, r in enumerate(trace.best_rmse_series)]
    return "\n".join(lines) + "\n"


def widths_csv(width_best: Dict[int, float]) -> str:
    lines = ["width,best_rmse"]
    lines += [f"{w},{r!r}" for w, r in sorted(width_best.items())]
    return "\n".join(lines) + "\n"
