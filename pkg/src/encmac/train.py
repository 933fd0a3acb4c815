"""Desk-scale quantized MLP inference on an encoding, and position-weight fine-tuning."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.cluster import KMeans
from sklearn.datasets import make_blobs
from torch import nn

from . import seeding
from .array_sim import decode_counts
from .errors import ContractError, TrainingDivergedError
from .fit import Encoding
from .quant import UNIFORM, QuantScheme, build_product_table, quantize
from .search import (
    DEFAULT_TARGET_FRACTION,
    SearchConfig,
    SearchTrace,
    relative_target,
    width_binary_search,
)

logger = logging.getLogger(__name__)


# ═══════════════════════════════════════════════════════════════════════
# Data
# ═══════════════════════════════════════════════════════════════════════


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ContractError(f"Dataset shapes disagree: x {self.x.shape}, y {self.y.shape}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def features(self) -> int:
        return self.x.shape[1]

    @property
    def classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0


def make_dataset(
    n: int = 1000, features: int = 16, classes: int = 2, seed: int = 0, spread: float = 3.0
) -> Dataset:
    """Seeded Gaussian blobs, one blob per class."""
    x, y = make_blobs(
        n_samples=n,
        n_features=features,
        centers=classes,
        cluster_std=spread,
        random_state=seeding.derive_seed(seed, seeding.DATASET),
    )
    return Dataset(x, y)


def split_dataset(data: Dataset, test_fraction: float = 0.25, seed: int = 0) -> Tuple[Dataset, Dataset]:
    rng = seeding.derive_rng(seed, seeding.DATASET, 1)
    order = rng.permutation(len(data))
    n_test = int(round(len(data) * test_fraction))
    test, train = order[:n_test], order[n_test:]
    return Dataset(data.x[train], data.y[train]), Dataset(data.x[test], data.y[test])


def load_dataset_csv(path: Path) -> Dataset:
    """Read ``feature...,label`` rows; a non-numeric first line is a header."""
    path = Path(path)
    with path.open() as f:
        first = f.readline()
    try:
        [float(v) for v in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    rows = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if rows.shape[1] < 2:
        raise ContractError(f"{path}: need at least one feature column and a label column")
    return Dataset(rows[:, :-1], rows[:, -1].astype(np.int64))


# ═══════════════════════════════════════════════════════════════════════
# Network
# ═══════════════════════════════════════════════════════════════════════


@dataclass
class DenseLayer:
    """Dense layer with quantized weights.

    real output = acc * weight_scale * act_scale + bias, where acc sums
    decoded products of weight codes and input activation codes.
    """

    weight_codes: np.ndarray
    bias: np.ndarray
    weight_scale: float
    act_scale: float
    relu: bool = True

    def __post_init__(self):
        self.weight_codes = np.asarray(self.weight_codes, dtype=np.int64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight_codes.ndim != 2 or self.bias.shape != (self.weight_codes.shape[0],):
            raise ContractError(
                f"Layer shapes disagree: weights {self.weight_codes.shape}, bias {self.bias.shape}"
            )

    @property
    def in_features(self) -> int:
        return self.weight_codes.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight_codes.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weight_codes": self.weight_codes.tolist(),
            "bias": self.bias.tolist(),
            "weight_scale": self.weight_scale,
            "act_scale": self.act_scale,
            "relu": self.relu,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DenseLayer":
        return cls(
            np.asarray(data["weight_codes"]),
            np.asarray(data["bias"]),
            float(data["weight_scale"]),
            float(data["act_scale"]),
            bool(data["relu"]),
        )


@dataclass
class ToyNetwork:
    """Quantized MLP; every layer shares one weight scheme and one activation scheme."""

    layers: List[DenseLayer]
    weight_scheme: QuantScheme
    act_scheme: QuantScheme

    def __post_init__(self):
        if not self.layers:
            raise ContractError("Network has no layers")
        if self.weight_scheme.width != self.act_scheme.width:
            raise ContractError("Weight and activation schemes differ in width")
        for i, layer in enumerate(self.layers):
            codes = layer.weight_codes
            if codes.size and (codes.min() < 0 or codes.max() >= self.weight_scheme.size):
                raise ContractError(f"Layer {i} has weight codes outside the weight scheme")
            if i and layer.in_features != self.layers[i - 1].out_features:
                raise ContractError(
                    f"Layer {i} expects {layer.in_features} inputs, "
                    f"layer {i - 1} gives {self.layers[i - 1].out_features}"
                )

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].in_features] + [layer.out_features for layer in self.layers]

    @property
    def input_scale(self) -> float:
        return self.layers[0].act_scale

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dims": self.dims,
            "weight_scheme": self.weight_scheme.to_dict(),
            "act_scheme": self.act_scheme.to_dict(),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ToyNetwork":
        net = cls(
            [DenseLayer.from_dict(d) for d in data["layers"]],
            QuantScheme.from_dict(data["weight_scheme"]),
            QuantScheme.from_dict(data["act_scheme"]),
        )
        if "dims" in data and list(data["dims"]) != net.dims:
            raise ContractError(f"Checkpoint dims {data['dims']} do not match layers {net.dims}")
        return net


@dataclass
class BaselineConfig:
    """Float training of the toy MLP before quantization."""

    hidden: Tuple[int, ...] = (32,)
    epochs: int = 60
    lr: float = 1e-2
    batch_size: int = 64
    seed: int = 0


def train_float_mlp(data: Dataset, cfg: BaselineConfig) -> nn.Sequential:
    """Train the float reference MLP (ReLU hidden layers, linear classifier)."""
    torch.manual_seed(seeding.derive_seed(cfg.seed, seeding.TRAIN, 0))
    dims = [data.features, *cfg.hidden, data.classes]
    modules: List[nn.Module] = []
    for i in range(len(dims) - 1):
        modules.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            modules.append(nn.ReLU())
    model = nn.Sequential(*modules).double()

    x = torch.from_numpy(data.x)
    y = torch.from_numpy(data.y)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = seeding.derive_rng(cfg.seed, seeding.TRAIN, 1)
    for epoch in range(cfg.epochs):
        order = torch.from_numpy(rng.permutation(len(data)))
        for start in range(0, len(data), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            optimizer.zero_grad()
            loss = F.cross_entropy(model(x[batch]), y[batch])
            loss.backward()
            optimizer.step()
    with torch.no_grad():
        accuracy = (model(x).argmax(1) == y).double().mean().item()
    logger.info(f"Float baseline {dims}: train accuracy {accuracy:.4f} after {cfg.epochs} epochs")
    return model


def _scale_for(scheme: QuantScheme, max_abs: float) -> float:
    if scheme.kind != UNIFORM:
        # codebook levels are already real values
        return 1.0
    top = (scheme.size // 2) - 1 or 1
    return max_abs / top if max_abs > 0 else 1.0


def quantize_network(
    model: nn.Sequential,
    calibration_x: np.ndarray,
    weight_scheme: QuantScheme,
    act_scheme: QuantScheme,
) -> ToyNetwork:
    """Post-training quantization with per-layer max-abs scales.

    Activation scales come from the float model's layer inputs on
    ``calibration_x``.
    """
    linears = [m for m in model if isinstance(m, nn.Linear)]
    h = torch.from_numpy(np.asarray(calibration_x, dtype=np.float64))
    layers = []
    with torch.no_grad():
        for i, linear in enumerate(linears):
            w = linear.weight.double().numpy()
            w_scale = _scale_for(weight_scheme, float(np.max(np.abs(w))))
            a_scale = _scale_for(act_scheme, float(h.abs().max()))
            layers.append(
                DenseLayer(
                    quantize(weight_scheme, w / w_scale),
                    linear.bias.double().numpy().copy(),
                    w_scale,
                    a_scale,
                    relu=i < len(linears) - 1,
                )
            )
            h = linear(h.to(linear.weight.dtype)).double()
            if i < len(linears) - 1:
                h = torch.relu(h)
    return ToyNetwork(layers, weight_scheme, act_scheme)


# ═══════════════════════════════════════════════════════════════════════
# Inference
# ═══════════════════════════════════════════════════════════════════════


def quantize_inputs(net: ToyNetwork, x: np.ndarray) -> np.ndarray:
    """Real input features to first-layer activation codes."""
    return quantize(net.act_scheme, np.asarray(x, dtype=np.float64) / net.input_scale)


def _check_encoding(net: ToyNetwork, encoding: Optional[Encoding]) -> None:
    if encoding is None:
        return
    if encoding.scheme1 != net.weight_scheme or encoding.scheme2 != net.act_scheme:
        raise ContractError(
            f"Encoding fitted for {encoding.describe()} but network uses "
            f"{net.weight_scheme.to_dict()} x {net.act_scheme.to_dict()}"
        )


def _column_sums(
    net: ToyNetwork, encoding: Optional[Encoding], weight_codes: np.ndarray, codes: np.ndarray
) -> np.ndarray:
    """Per-output sums of products, shape (batch, out).

    Encoded sums accumulate bit counts and decode once per output, exactly
    as one array column does (``column_mac``).
    """
    if encoding is None:
        grid = build_product_table(net.weight_scheme, net.act_scheme).value_grid
        return grid[weight_codes[None, :, :], codes[:, None, :]].sum(axis=2)
    counts = encoding.bits_table[weight_codes[None, :, :], codes[:, None, :]].sum(axis=2, dtype=np.int64)
    flat = counts.reshape(-1, encoding.output_width)
    unique, inverse = np.unique(flat, axis=0, return_inverse=True)
    weights = encoding.weights.tolist()
    decoded = np.array([decode_counts(row, weights) for row in unique.tolist()], dtype=np.float64)
    return decoded[inverse.reshape(-1)].reshape(counts.shape[:2])


def infer(net: ToyNetwork, encoding: Optional[Encoding], input_codes: np.ndarray) -> np.ndarray:
    """Class scores for a batch of first-layer activation codes.

    Each dense layer computes its outputs like array columns (bit counts,
    then one decode, see ``column_mac``), rescales, adds bias, applies ReLU
    and requantizes. ``encoding`` None runs exact quantized inference.

    Raises:
        ContractError: On scheme mismatch or out-of-range input codes
    """
    _check_encoding(net, encoding)
    codes = np.asarray(input_codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] != net.layers[0].in_features:
        raise ContractError(f"Input codes must be (batch, {net.layers[0].in_features}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= net.act_scheme.size):
        raise ContractError("Input codes outside the activation scheme")
    h = None
    for i, layer in enumerate(net.layers):
        if i:
            codes = quantize(net.act_scheme, h / layer.act_scale)
        acc = _column_sums(net, encoding, layer.weight_codes, codes)
        h = acc * (layer.weight_scale * layer.act_scale) + layer.bias
        if layer.relu:
            h = np.maximum(h, 0.0)
    return h


def accuracy(net: ToyNetwork, encoding: Optional[Encoding], data: Dataset) -> float:
    scores = infer(net, encoding, quantize_inputs(net, data.x))
    return float(np.mean(scores.argmax(axis=1) == data.y))


# ═══════════════════════════════════════════════════════════════════════
# Fine-tuning
# ═══════════════════════════════════════════════════════════════════════


@dataclass
class FinetuneConfig:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    loss: str = "cross-entropy"
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ContractError(f"Learning rate must be >= 0, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.loss != "cross-entropy":
            raise ContractError(f"Unsupported loss {self.loss!r}")


@dataclass
class FinetuneResult:
    encoding: Encoding
    losses: List[float]
    accuracy_before: float
    accuracy_after: float
    best_epoch: int = 0


def _encoded_scores(
    net: ToyNetwork, encoding: Encoding, s: torch.Tensor, input_codes: np.ndarray
) -> torch.Tensor:
    """Differentiable forward pass in position weights.

    A layer's encoded output is ``counts @ s`` (linear in s). Gradients to
    the layer input pass through an exact-product surrogate, and through
    activation quantizers as identity.
    """
    bits = encoding.bits_table
    levels = torch.from_numpy(net.act_scheme.levels)
    codes = np.asarray(input_codes, dtype=np.int64)
    a_units = levels[torch.from_numpy(codes)]
    h = None
    for i, layer in enumerate(net.layers):
        if i:
            x_units = h / layer.act_scale
            codes = quantize(net.act_scheme, x_units.detach().numpy())
            q_units = levels[torch.from_numpy(codes)]
            a_units = x_units + (q_units - x_units).detach()
        counts = bits[layer.weight_codes[None, :, :], codes[:, None, :]].sum(axis=2, dtype=np.int64)
        encoded = torch.from_numpy(counts).double() @ s
        w_units = torch.from_numpy(net.weight_scheme.levels[layer.weight_codes])
        surrogate = a_units @ w_units.T
        units = encoded + (surrogate - surrogate.detach())
        h = units * (layer.weight_scale * layer.act_scale) + torch.from_numpy(layer.bias)
        if layer.relu:
            h = torch.relu(h)
    return h


def position_weight_loss(
    net: ToyNetwork,
    encoding: Encoding,
    input_codes: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Cross-entropy loss and its gradient with respect to the position weights."""
    _check_encoding(net, encoding)
    s = torch.tensor(encoding.weights if weights is None else weights, dtype=torch.float64, requires_grad=True)
    loss = F.cross_entropy(_encoded_scores(net, encoding, s, input_codes), torch.from_numpy(np.asarray(labels)))
    loss.backward()
    return float(loss.item()), s.grad.numpy().copy()


def finetune_position_weights(
    net: ToyNetwork, encoding: Encoding, data: Dataset, cfg: FinetuneConfig
) -> FinetuneResult:
    """Adam on the position weights only; circuit and weight codes stay frozen.

    The loss curve records the full-training-set loss after each epoch. The
    returned weights are the ones with the best training accuracy seen,
    the starting weights included.

    Raises:
        TrainingDivergedError: If the loss becomes NaN or infinite
    """
    _check_encoding(net, encoding)
    codes = quantize_inputs(net, data.x)
    labels = torch.from_numpy(data.y)
    s = torch.tensor(encoding.weights, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.Adam([s], lr=cfg.lr)
    rng = seeding.derive_rng(cfg.seed, seeding.TRAIN, 2)

    def full_loss() -> float:
        with torch.no_grad():
            return float(F.cross_entropy(_encoded_scores(net, encoding, s, codes), labels).item())

    best_acc = accuracy(net, encoding, data)
    before, best_weights, best_epoch = best_acc, encoding.weights.copy(), 0
    losses = [full_loss()]
    logger.info(f"Fine-tuning {encoding.output_width} position weights: start loss {losses[0]:.6g}, accuracy {before:.4f}")

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            optimizer.zero_grad()
            scores = _encoded_scores(net, encoding, s, codes[batch])
            loss = F.cross_entropy(scores, labels[torch.from_numpy(batch)])
            if not torch.isfinite(loss):
                logger.error(f"Loss diverged in epoch {epoch}")
                raise TrainingDivergedError(f"Loss became {loss.item()} in epoch {epoch}", losses)
            loss.backward()
            optimizer.step()
        losses.append(full_loss())
        if not np.isfinite(losses[-1]) or not torch.all(torch.isfinite(s)):
            logger.error(f"Loss diverged after epoch {epoch}")
            raise TrainingDivergedError(f"Loss became {losses[-1]} after epoch {epoch}", losses)
        candidate = encoding.with_weights(s.detach().numpy().copy())
        acc = accuracy(net, candidate, data)
        logger.debug(f"Epoch {epoch}: loss {losses[-1]:.6g}, accuracy {acc:.4f}")
        if acc > best_acc:
            best_acc, best_weights, best_epoch = acc, candidate.weights.copy(), epoch

    tuned = encoding.with_weights(best_weights)
    logger.info(f"Fine-tuning done: accuracy {before:.4f} -> {best_acc:.4f} (epoch {best_epoch}), rmse {tuned.rmse:.6g}")
    return FinetuneResult(tuned, losses, before, best_acc, best_epoch)


# ═══════════════════════════════════════════════════════════════════════
# Non-uniform quantization
# ═══════════════════════════════════════════════════════════════════════


def learn_codebook(values: np.ndarray, width: int = 4, seed: int = 0) -> QuantScheme:
    """Fit 2^width sorted k-means levels to a set of real values.

    With fewer distinct values than levels the top level is repeated.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    n_levels = 1 << width
    k = min(n_levels, len(np.unique(values)))
    if k == 0:
        raise ContractError("Cannot learn a codebook from no values")
    km = KMeans(n_clusters=k, random_state=seeding.derive_seed(seed, seeding.CODEBOOK), n_init=10)
    km.fit(values)
    levels = np.sort(km.cluster_centers_.ravel())
    levels = np.concatenate([levels, np.full(n_levels - k, levels[-1])])
    return QuantScheme.from_codebook(levels.tolist())


@dataclass
class PipelineReport:
    weight_scheme: QuantScheme
    act_scheme: QuantScheme
    table_rows: int
    target_rmse: float
    chosen_width: int
    encoding: Encoding
    trace: SearchTrace
    exact_accuracy: Optional[float] = None
    encoded_accuracy: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weight_scheme": self.weight_scheme.to_dict(),
            "act_scheme": self.act_scheme.to_dict(),
            "table_rows": self.table_rows,
            "target_rmse": self.target_rmse,
            "chosen_width": self.chosen_width,
            "rmse": self.encoding.rmse,
            "exact_accuracy": self.exact_accuracy,
            "encoded_accuracy": self.encoded_accuracy,
        }


def nonuniform_pipeline(
    codebook: Optional[QuantScheme],
    cfg: SearchConfig,
    width: int = 4,
    act_scheme: Optional[QuantScheme] = None,
    model: Optional[nn.Sequential] = None,
    train_data: Optional[Dataset] = None,
    test_data: Optional[Dataset] = None,
    target_fraction: float = DEFAULT_TARGET_FRACTION,
    jobs: int = 1,
) -> PipelineReport:
    """Search an encoding directly on a codebook product table.

    Without a codebook, one is learned by k-means over the float model's
    weights; without an activation scheme, one is learned over its layer
    inputs on ``train_data`` (or the weight codebook is reused).
    """
    if codebook is None:
        if model is None:
            raise ContractError("Learning a codebook needs a float model")
        weights = np.concatenate(
            [m.weight.detach().double().numpy().ravel() for m in model if isinstance(m, nn.Linear)]
        )
        codebook = learn_codebook(weights, width, cfg.seed)
    if act_scheme is None:
        if model is not None and train_data is not None:
            act_scheme = learn_codebook(_layer_inputs(model, train_data.x), codebook.width, cfg.seed)
        else:
            act_scheme = codebook

    table = build_product_table(codebook, act_scheme)
    target = cfg.target_rmse if cfg.target_rmse is not None else relative_target(table, target_fraction)
    logger.info(f"=== Codebook pipeline: W={codebook.width}, {len(table)} rows, target {target:.6g} ===")
    encoding, trace = width_binary_search(table, replace(cfg, target_rmse=target), jobs=jobs)

    report = PipelineReport(codebook, act_scheme, len(table), target, trace.chosen_width, encoding, trace)
    if model is not None and train_data is not None and test_data is not None:
        net = quantize_network(model, train_data.x, codebook, act_scheme)
        report.exact_accuracy = accuracy(net, None, test_data)
        report.encoded_accuracy = accuracy(net, encoding, test_data)
        logger.info(
            f"Codebook network accuracy: exact {report.exact_accuracy:.4f}, "
            f"encoded {report.encoded_accuracy:.4f}"
        )
    return report


def _layer_inputs(model: nn.Sequential, x: np.ndarray) -> np.ndarray:
    """All activations entering the model's linear layers."""
    h = torch.from_numpy(np.asarray(x, dtype=np.float64))
    seen = []
    with torch.no_grad():
        for module in model:
            if isinstance(module, nn.Linear):
                seen.append(h.numpy().ravel().copy())
            h = module(h)
    return np.concatenate(seen)
