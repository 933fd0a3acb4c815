"""Toy-network evaluation, fine-tuning and accuracy sweeps."""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..config import ExperimentConfig
from ..errors import TrainingDivergedError
from ..fit import Encoding
from ..quant import QuantScheme, build_product_table
from ..search import sample_search
from ..train import (
    Dataset,
    ToyNetwork,
    accuracy,
    finetune_position_weights,
    load_dataset_csv,
    make_dataset,
    nonuniform_pipeline,
    quantize_network,
    split_dataset,
    train_float_mlp,
)
from ..workspace import Workspace

logger = logging.getLogger(__name__)


def load_splits(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Train/test splits of the configured CSV dataset or the seeded blobs."""
    section = cfg.train
    if section.dataset:
        data = load_dataset_csv(section.dataset)
    else:
        data = make_dataset(section.samples, section.features, seed=cfg.seed)
    return split_dataset(data, section.test_fraction, cfg.seed)


def prepare_network(
    cfg: ExperimentConfig,
    train_data: Dataset,
    schemes: Optional[Tuple[QuantScheme, QuantScheme]] = None,
) -> ToyNetwork:
    """Load the network checkpoint, or train a float baseline and quantize it."""
    if cfg.train.network:
        return ToyNetwork.from_dict(Workspace.read_json(cfg.train.network))
    weight_scheme, act_scheme = schemes or cfg.quant.schemes()
    model = train_float_mlp(train_data, cfg.train.baseline_config(cfg.seed))
    return quantize_network(model, train_data.x, weight_scheme, act_scheme)


def _load_encoding(path) -> Encoding:
    return Encoding.from_dict(Workspace.read_json(path))


def _loss_csv(losses: Sequence[float]) -> str:
    lines = ["epoch,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses)]
    return "\n".join(lines) + "\n"


def cmd_eval(workspace: Workspace, cfg: ExperimentConfig, encoding_path=None) -> Dict[str, Any]:
    """Exact and (optionally) encoded accuracy of the toy network.

    Writes ``network.json`` (checkpoint) and ``eval_metrics.json``.
    """
    encoding = _load_encoding(encoding_path) if encoding_path else None
    train_data, test_data = load_splits(cfg)
    schemes = (encoding.scheme1, encoding.scheme2) if encoding else None
    net = prepare_network(cfg, train_data, schemes)
    logger.info(f"=== EVAL: network {net.dims}, encoding={'yes' if encoding else 'no'} ===")

    metrics: Dict[str, Any] = {
        "dims": net.dims,
        "exact_train_accuracy": accuracy(net, None, train_data),
        "exact_test_accuracy": accuracy(net, None, test_data),
    }
    if encoding is not None:
        metrics["output_width"] = encoding.output_width
        metrics["rmse"] = encoding.rmse
        metrics["encoded_train_accuracy"] = accuracy(net, encoding, train_data)
        metrics["encoded_test_accuracy"] = accuracy(net, encoding, test_data)
    workspace.write_json("network.json", net.to_dict())
    workspace.write_json("eval_metrics.json", metrics)
    return metrics


def cmd_finetune(workspace: Workspace, cfg: ExperimentConfig, encoding_path) -> Dict[str, Any]:
    """Fine-tune position weights on the training split.

    Writes ``encoding_finetuned.json``, ``loss_curve.csv`` and
    ``finetune_metrics.json``.

    Raises:
        TrainingDivergedError: After writing the loss curve so far
    """
    encoding = _load_encoding(encoding_path)
    train_data, test_data = load_splits(cfg)
    net = prepare_network(cfg, train_data, (encoding.scheme1, encoding.scheme2))
    logger.info(f"=== FINETUNE: M={encoding.output_width}, {cfg.train.epochs} epochs, lr {cfg.train.lr} ===")

    try:
        result = finetune_position_weights(net, encoding, train_data, cfg.train.finetune_config(cfg.seed))
    except TrainingDivergedError as e:
        workspace.write_text("loss_curve.csv", _loss_csv(e.losses))
        raise

    metrics = {
        "output_width": encoding.output_width,
        "rmse_before": encoding.rmse,
        "rmse_after": result.encoding.rmse,
        "train_accuracy_before": result.accuracy_before,
        "train_accuracy_after": result.accuracy_after,
        "test_accuracy_before": accuracy(net, encoding, test_data),
        "test_accuracy_after": accuracy(net, result.encoding, test_data),
        "exact_test_accuracy": accuracy(net, None, test_data),
        "best_epoch": result.best_epoch,
    }
    workspace.write_json("encoding_finetuned.json", result.encoding.to_dict())
    workspace.write_text("loss_curve.csv", _loss_csv(result.losses))
    workspace.write_json("finetune_metrics.json", metrics)
    logger.info("=== FINETUNE DONE ===")
    return metrics


def cmd_sweep_accuracy(
    workspace: Workspace, cfg: ExperimentConfig, widths: Optional[Sequence[int]] = None
) -> Dict[str, Any]:
    """Toy-network accuracy per output width, before and after fine-tuning.

    Writes ``accuracy_vs_width.csv``.
    """
    widths = list(widths or cfg.search.sweep_widths)
    s1, s2 = cfg.quant.schemes()
    table = build_product_table(s1, s2)
    train_data, test_data = load_splits(cfg)
    net = prepare_network(cfg, train_data, (s1, s2))
    exact = accuracy(net, None, test_data)
    search_cfg = cfg.search.to_search_config(cfg.seed)
    logger.info(f"=== ACCURACY SWEEP: widths {widths}, exact test accuracy {exact:.4f} ===")

    rows: List[Dict[str, Any]] = []
    for width in widths:
        encoding, _ = sample_search(table, width, search_cfg, jobs=cfg.jobs)
        tuned = finetune_position_weights(net, encoding, train_data, cfg.train.finetune_config(cfg.seed))
        rows.append(
            {
                "width": width,
                "rmse": encoding.rmse,
                "accuracy_before": accuracy(net, encoding, test_data),
                "accuracy_after": accuracy(net, tuned.encoding, test_data),
            }
        )
        logger.info(f"M={width}: accuracy {rows[-1]['accuracy_before']:.4f} -> {rows[-1]['accuracy_after']:.4f}")

    lines = ["width,rmse,accuracy_before,accuracy_after,exact_accuracy"]
    lines += [f"{r['width']},{r['rmse']!r},{r['accuracy_before']!r},{r['accuracy_after']!r},{exact!r}" for r in rows]
    path = workspace.write_text("accuracy_vs_width.csv", "\n".join(lines) + "\n")
    return {"exact_accuracy": exact, "points": rows, "path": str(path)}


def cmd_nonuniform(workspace: Workspace, cfg: ExperimentConfig) -> Dict[str, Any]:
    """Width search on a learned (or configured) codebook product table.

    The codebook comes from ``quant.codebook`` when ``quant.kind`` is the
    codebook kind, otherwise k-means over the float baseline's weights.
    Writes ``nonuniform.json`` and ``encoding_nonuniform.json``.
    """
    train_data, test_data = load_splits(cfg)
    model = train_float_mlp(train_data, cfg.train.baseline_config(cfg.seed))
    codebook = act_scheme = None
    if cfg.quant.codebook is not None:
        codebook, act_scheme = cfg.quant.schemes()
    report = nonuniform_pipeline(
        codebook,
        cfg.search.to_search_config(cfg.seed),
        width=cfg.train.codebook_width,
        act_scheme=act_scheme,
        model=model,
        train_data=train_data,
        test_data=test_data,
        target_fraction=cfg.target_fraction,
        jobs=cfg.jobs,
    )
    summary = report.to_dict()
    workspace.write_json("encoding_nonuniform.json", report.encoding.to_dict())
    summary["path"] = str(workspace.write_json("nonuniform.json", summary))
    return summary
