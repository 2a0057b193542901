"""Structured settings for every stage of the engine, loaded through OmegaConf."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Union

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .conversation import AttentionMaskKind
from .diffusion import RemaskStrategy
from .errors import ConfigurationError
from .stages import TrainStage

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Tiny transformer and projector dimensions."""
    d_model: int = 64
    n_heads: int = 2
    n_blocks: int = 2
    d_ff: int = 128
    projector_hidden: int = 64
    max_len: int = 64  # learned absolute positions
    init_scale: float = 0.02  # uniform in [-init_scale, init_scale]


@dataclass
class GroupRates:
    """Learning rate per parameter group."""
    vision: float = 0.0  # the featurizer has no parameters
    language: float = 0.03
    projector: float = 0.03

    def get(self, group: str) -> float:
        return float(getattr(self, group))


@dataclass
class TrainConfig:
    """Stage schedule and optimizer settings."""
    stage: TrainStage = TrainStage.INSTRUCT
    stages: List[TrainStage] = field(default_factory=list)  # pipeline; empty runs `stage` alone
    rates: GroupRates = field(default_factory=GroupRates)
    batch_size: int = 16
    steps: int = 300
    epsilon: float = 1e-3  # floor of t ~ Uniform(epsilon, 1)
    momentum: float = 0.9
    max_grad_norm: Optional[float] = 1.0
    attention: AttentionMaskKind = AttentionMaskKind.DIALOGUE_CAUSAL
    think_rate: float = 0.5  # share of REASONING prompts tagged THINK
    log_every: int = 10
    workers: int = 1  # gradient shards; 1 evaluates inline
    corpus: Optional[str] = None  # JSONL; generated from `task` when unset
    quiet: bool = False

    @property
    def stage_plan(self) -> list[TrainStage]:
        return list(self.stages) or [self.stage]


@dataclass
class SamplerConfig:
    """Reverse-process generation settings."""
    gen_length: int = 12
    steps: int = 12
    strategy: RemaskStrategy = RemaskStrategy.LOW_CONFIDENCE
    attention: AttentionMaskKind = AttentionMaskKind.DIALOGUE_CAUSAL
    temperature: float = 0.0  # 0 selects the argmax token
    seed: int = 0
    block_length: Optional[int] = None  # semi-autoregressive blocks; None decodes at once


@dataclass
class TaskConfig:
    """Synthetic grid-caption task."""
    family: str = "caption"  # caption | color | count | copy
    height: int = 2
    width: int = 2
    n_shapes: int = 2
    n_colors: int = 2
    train_size: int = 5000
    eval_size: int = 500
    eval_percent: int = 10  # share of distinct grids held out for evaluation
    with_tags: bool = True


@dataclass
class EvalConfig:
    """Evaluation settings."""
    limit: Optional[int] = None  # first N eval examples only
    loss_draws: int = 1  # mc_loss draws per example for the mean bound
    corpus: Optional[str] = None


@dataclass
class AblationConfig:
    """Cells of an ablation run; every other factor stays fixed."""
    attentions: List[AttentionMaskKind] = field(
        default_factory=lambda: [AttentionMaskKind.NO_MASK, AttentionMaskKind.DIALOGUE_CAUSAL]
    )
    strategies: List[RemaskStrategy] = field(
        default_factory=lambda: [RemaskStrategy.LOW_CONFIDENCE]
    )
    workers: int = 1


@dataclass
class AppConfig:
    """Root settings tree: seed, output directory and one section per concern."""
    seed: int = 0
    out_dir: str = "runs"
    log_level: str = "INFO"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)


def validate_config(cfg: AppConfig) -> AppConfig:
    """Check value ranges the schema cannot express."""
    train = cfg.train
    if not 0.0 < train.epsilon <= 0.1:
        raise ConfigurationError(f"train.epsilon must lie in (0, 0.1], got {train.epsilon}")
    for group in ("vision", "language", "projector"):
        if train.rates.get(group) < 0:
            raise ConfigurationError(f"train.rates.{group} must be >= 0")
    if train.batch_size < 1 or train.steps < 0 or train.workers < 1:
        raise ConfigurationError("train.batch_size and train.workers must be >= 1, train.steps >= 0")
    if not 0.0 <= train.momentum < 1.0:
        raise ConfigurationError(f"train.momentum must lie in [0, 1), got {train.momentum}")

    model = cfg.model
    if model.d_model % model.n_heads:
        raise ConfigurationError("model.d_model must be divisible by model.n_heads")
    if model.n_blocks < 1:
        raise ConfigurationError("model.n_blocks must be >= 1")

    sampler = cfg.sampler
    if sampler.gen_length < 1 or sampler.steps < 1:
        raise ConfigurationError("sampler.gen_length and sampler.steps must be >= 1")
    if sampler.temperature < 0:
        raise ConfigurationError("sampler.temperature must be >= 0")
    if sampler.block_length is not None and sampler.block_length < 1:
        raise ConfigurationError("sampler.block_length must be >= 1 when set")

    if not 0 <= cfg.task.eval_percent < 100:
        raise ConfigurationError("task.eval_percent must lie in [0, 100)")
    return cfg


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
) -> AppConfig:
    """
    Build the configuration from defaults, an optional file and dotted overrides.

    Args:
        path: YAML or JSON file whose keys mirror ``AppConfig``.
        overrides: ``key=value`` strings such as ``train.steps=200``.

    Returns:
        A validated ``AppConfig``.
    """
    schema = OmegaConf.structured(AppConfig)
    try:
        layers = [schema]
        if path is not None:
            layers.append(OmegaConf.load(str(path)))
        overrides = list(overrides)
        if overrides:
            layers.append(OmegaConf.from_dotlist(overrides))
        merged = OmegaConf.merge(*layers)
        cfg = OmegaConf.to_object(merged)
    except (OmegaConfBaseException, OSError) as e:
        raise ConfigurationError(f"could not load configuration: {e}") from e

    logger.debug("configuration loaded from %s with %d overrides", path or "defaults", len(overrides))
    return validate_config(cfg)


def config_to_yaml(cfg: AppConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(cfg))
