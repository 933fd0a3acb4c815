"""Array simulation against the systolic baseline."""

import logging
from typing import Any, Dict

import numpy as np

from .. import seeding
from ..array_sim import ArrayConfig, simulate_encoded_array, simulate_traditional_array
from ..config import ExperimentConfig
from ..fit import Encoding
from ..workspace import Workspace

logger = logging.getLogger(__name__)


def cmd_simulate(workspace: Workspace, cfg: ExperimentConfig, encoding_path) -> Dict[str, Any]:
    """Run both arrays on seeded random operands and write ``simulation.json``.

    Functional outputs are computed only up to ``array.functional_limit``;
    cycle counts and cost always are.
    """
    encoding = Encoding.from_dict(Workspace.read_json(encoding_path))
    section = cfg.array
    N, m = section.size, section.matrices
    array_cfg = ArrayConfig(N, encoding, section.clock_period, section.accumulator_width)
    functional = N <= section.functional_limit
    logger.info(f"=== SIMULATE: {N}x{N} array, {m} matrices, functional={functional} ===")

    rng = seeding.derive_rng(cfg.seed, seeding.ARRAY)
    Wmat = rng.integers(0, encoding.scheme1.size, size=(N, N))
    inputs = rng.integers(0, encoding.scheme2.size, size=(m, N, N))

    encoded = simulate_encoded_array(array_cfg, Wmat, inputs, functional=functional)
    baseline = simulate_traditional_array(array_cfg, Wmat, inputs, functional=functional)

    report: Dict[str, Any] = {
        "array_size": N,
        "matrices": m,
        "output_width": encoding.output_width,
        "encoded": encoded.to_dict(),
        "traditional": baseline.to_dict(),
        "latency_ratio": encoded.latency_cycles / baseline.latency_cycles,
    }
    if functional:
        error = encoded.outputs - baseline.outputs
        report["output_error"] = {
            "max_abs": float(np.max(np.abs(error))),
            "rmse": float(np.sqrt(np.mean(error**2))),
        }
    report["path"] = str(workspace.write_json("simulation.json", report))
    logger.info(
        f"Latency {encoded.latency_cycles} vs {baseline.latency_cycles} cycles; "
        f"multiplier gates {encoded.cost['multiplier_gates_total']} vs {baseline.cost['multiplier_gates_total']}"
    )
    return report
