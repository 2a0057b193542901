"""Synthetic tasks, evaluation, ablations and oracle checks."""

from .ablation import run_ablation
from .evaluation import evaluate
from .oracle_check import Suite, run_suite
from .tasks import GridCaptionTask, TruthPredictor, make_corpus

__all__ = [
    "run_ablation",
    "evaluate",
    "Suite",
    "run_suite",
    "GridCaptionTask",
    "TruthPredictor",
    "make_corpus",
]
