"""Experiment configuration: JSON file, environment defaults and CLI overrides.

Precedence is flags > config file > environment > built-in defaults. The
environment is read after ``load_dotenv()``:

    ENCMAC_SEED       master seed
    ENCMAC_JOBS       worker processes for sampling
    ENCMAC_OUT        output directory
    ENCMAC_LOG_LEVEL  logging level name
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from .errors import ContractError
from .quant import CODEBOOK, UNIFORM, QuantScheme
from .search import DEFAULT_TARGET_FRACTION, SearchConfig
from .train import BaselineConfig, FinetuneConfig

logger = logging.getLogger(__name__)


@dataclass
class QuantSection:
    """Operand schemes. The activation operand defaults to the weight scheme."""

    kind: str = UNIFORM
    width: int = 8
    codebook: Optional[List[float]] = None
    act_kind: Optional[str] = None
    act_codebook: Optional[List[float]] = None

    def schemes(self) -> Tuple[QuantScheme, QuantScheme]:
        weight = self._scheme(self.kind, self.codebook)
        if self.act_kind is None and self.act_codebook is None:
            return weight, weight
        return weight, self._scheme(self.act_kind or self.kind, self.act_codebook)

    def _scheme(self, kind: str, codebook: Optional[List[float]]) -> QuantScheme:
        if kind == CODEBOOK:
            if codebook is None:
                raise ContractError("Codebook quantization needs a codebook")
            return QuantScheme(CODEBOOK, self.width, tuple(codebook))
        return QuantScheme(kind, self.width)


@dataclass
class SearchSection:
    max_samples: int = 10_000
    window: int = 1000
    epsilon: float = 0.005
    min_width: Optional[int] = None
    max_width: Optional[int] = None
    target_rmse: Optional[float] = None
    output_width: Optional[int] = None
    sweep_widths: List[int] = field(default_factory=lambda: [16, 24, 32, 40, 48, 56, 64])

    def to_search_config(self, seed: int, target_rmse: Optional[float] = None) -> SearchConfig:
        return SearchConfig(
            max_samples=self.max_samples,
            window=self.window,
            epsilon=self.epsilon,
            min_width=self.min_width,
            max_width=self.max_width,
            target_rmse=target_rmse if target_rmse is not None else self.target_rmse,
            seed=seed,
        )


@dataclass
class ArraySection:
    size: int = 16
    matrices: int = 1
    clock_period: float = 1.0
    accumulator_width: Optional[int] = None
    functional_limit: int = 64


@dataclass
class TrainSection:
    samples: int = 1000
    features: int = 16
    hidden: List[int] = field(default_factory=lambda: [32])
    test_fraction: float = 0.25
    dataset: Optional[str] = None
    network: Optional[str] = None
    baseline_epochs: int = 60
    baseline_lr: float = 1e-2
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    codebook_width: int = 4

    def baseline_config(self, seed: int) -> BaselineConfig:
        return BaselineConfig(tuple(self.hidden), self.baseline_epochs, self.baseline_lr, self.batch_size, seed)

    def finetune_config(self, seed: int) -> FinetuneConfig:
        return FinetuneConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, seed=seed)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "."
    jobs: int = 1
    target_fraction: float = DEFAULT_TARGET_FRACTION
    log_level: str = "INFO"
    quant: QuantSection = field(default_factory=QuantSection)
    search: SearchSection = field(default_factory=SearchSection)
    array: ArraySection = field(default_factory=ArraySection)
    train: TrainSection = field(default_factory=TrainSection)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        """Overlay ``data`` on ``base`` (defaults when omitted).

        Raises:
            ContractError: On unknown keys
        """
        return _overlay(base or cls(), data, "")


def _overlay(obj: Any, data: Dict[str, Any], prefix: str) -> Any:
    if not isinstance(data, dict):
        raise ContractError(f"Config section {prefix or '<root>'} must be an object")
    known = {f.name: f for f in fields(obj)}
    unknown = set(data) - set(known)
    if unknown:
        raise ContractError(f"Unknown config keys in {prefix or '<root>'}: {sorted(unknown)}")
    changes = {}
    for key, value in data.items():
        current = getattr(obj, key)
        if is_dataclass(current):
            changes[key] = _overlay(current, value, f"{prefix}{key}.")
        else:
            changes[key] = value
    return replace(obj, **changes)


def env_defaults() -> ExperimentConfig:
    """Built-in defaults with environment overrides applied."""
    load_dotenv()
    cfg = ExperimentConfig()
    try:
        if os.getenv("ENCMAC_SEED"):
            cfg.seed = int(os.environ["ENCMAC_SEED"])
        if os.getenv("ENCMAC_JOBS"):
            cfg.jobs = int(os.environ["ENCMAC_JOBS"])
    except ValueError as e:
        raise ContractError(f"Bad integer in environment: {e}") from e
    cfg.out = os.getenv("ENCMAC_OUT", cfg.out)
    cfg.log_level = os.getenv("ENCMAC_LOG_LEVEL", cfg.log_level).upper()
    return cfg


def load_config(path: Optional[Path] = None) -> ExperimentConfig:
    """Environment defaults overlaid with the JSON config file, if any."""
    cfg = env_defaults()
    if path is None:
        return cfg
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ContractError(f"{path}: not valid JSON ({e})") from e
    logger.info(f"Loaded experiment config from {path}")
    return ExperimentConfig.from_dict(data, cfg)


def save_config(cfg: ExperimentConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def apply_overrides(cfg: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Apply dotted-key overrides such as ``{"search.max_samples": 500}``; None values are skipped."""
    nested: Dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = nested
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return ExperimentConfig.from_dict(nested, cfg)
