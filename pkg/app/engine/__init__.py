"""Training, sampling and the exact oracles."""

from .oracle import enumerate_forward, enumerate_reverse, exact_bound
from .sampler import generate, multi_turn_chat, resolve
from .trainer import mc_loss, run_pipeline, train_stage

__all__ = [
    "enumerate_forward",
    "enumerate_reverse",
    "exact_bound",
    "generate",
    "multi_turn_chat",
    "resolve",
    "mc_loss",
    "run_pipeline",
    "train_stage",
]
