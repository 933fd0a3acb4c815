"""Encoding search and RMSE sweep operations."""

import logging
from typing import Any, Dict, List, Optional, Sequence

from ..circuit import gate_count
from ..config import ExperimentConfig
from ..errors import TargetUnreachableError
from ..fit import Encoding
from ..quant import build_product_table
from ..search import (
    SearchTrace,
    relative_target,
    sample_search,
    samples_csv,
    sweep_widths,
    width_binary_search,
    widths_csv,
)
from ..workspace import Workspace

logger = logging.getLogger(__name__)


def _write_search_artifacts(workspace: Workspace, encoding: Encoding, trace: SearchTrace) -> Dict[str, str]:
    return {
        "encoding": str(workspace.write_json("encoding.json", encoding.to_dict())),
        "rmse_vs_samples": str(workspace.write_text("rmse_vs_samples.csv", samples_csv(trace))),
        "rmse_vs_width": str(workspace.write_text("rmse_vs_width.csv", widths_csv(trace.width_best))),
    }


def cmd_search(workspace: Workspace, cfg: ExperimentConfig) -> Dict[str, Any]:
    """Search an encoding and write ``encoding.json`` plus trace CSVs.

    With ``search.output_width`` set only that width is sampled; otherwise
    the output width is binary-searched against the target RMSE (absolute
    ``search.target_rmse``, else ``target_fraction`` of the table's RMS value).

    Raises:
        TargetUnreachableError: After writing the best-effort encoding
    """
    s1, s2 = cfg.quant.schemes()
    table = build_product_table(s1, s2)
    target = cfg.search.target_rmse
    if target is None:
        target = relative_target(table, cfg.target_fraction)
    search_cfg = cfg.search.to_search_config(cfg.seed, target)
    logger.info(f"=== SEARCH: W={table.operand_width}, {len(table)} rows, target RMSE {target:.6g} ===")

    if cfg.search.output_width is not None:
        encoding, trace = sample_search(table, cfg.search.output_width, search_cfg, jobs=cfg.jobs)
    else:
        try:
            encoding, trace = width_binary_search(table, search_cfg, jobs=cfg.jobs)
        except TargetUnreachableError as e:
            _write_search_artifacts(workspace, e.encoding, e.trace)
            raise

    paths = _write_search_artifacts(workspace, encoding, trace)
    logger.info("=== SEARCH DONE ===")
    return {
        "output_width": encoding.output_width,
        "rmse": encoding.rmse,
        "target_rmse": target,
        "gate_count": gate_count(encoding.circuit).total,
        "samples_evaluated": trace.samples_evaluated,
        "files": paths,
    }


def cmd_sweep(
    workspace: Workspace, cfg: ExperimentConfig, widths: Optional[Sequence[int]] = None
) -> Dict[str, Any]:
    """Best RMSE per output width, and best-so-far RMSE per sample at each width.

    Writes ``sweep_rmse_vs_width.csv`` and ``sweep_rmse_vs_samples.csv``.
    """
    s1, s2 = cfg.quant.schemes()
    table = build_product_table(s1, s2)
    widths = list(widths or cfg.search.sweep_widths)
    logger.info(f"=== SWEEP: W={table.operand_width}, widths {widths} ===")
    results = sweep_widths(table, widths, cfg.search.to_search_config(cfg.seed), jobs=cfg.jobs)

    width_best = {width: encoding.rmse for width, encoding, _ in results}
    lines: List[str] = ["width,sample_index,best_rmse"]
    for width, _, trace in results:
        lines += [f"{width},{i},{r!r}" for i, r in enumerate(trace.best_rmse_series)]
    files = {
        "rmse_vs_width": str(workspace.write_text("sweep_rmse_vs_width.csv", widths_csv(width_best))),
        "rmse_vs_samples": str(workspace.write_text("sweep_rmse_vs_samples.csv", "\n".join(lines) + "\n")),
    }
    return {"widths": {str(w): r for w, r in width_best.items()}, "files": files}
