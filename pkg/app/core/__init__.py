"""Diffusion math, conversation layouts, settings, seeding and result records."""

from .config import AppConfig, load_config
from .conversation import AttentionMaskKind, ConversationExample, CorpusClass, SequenceLayout, Turn
from .diffusion import MaskedSequence, RemaskStrategy, Sequence, forward_mask, reverse_transition
from .errors import EngineError
from .seeding import Stream, stream_rng
from .stages import StagePipeline, TrainStage
from .vocab import MASK_TOKEN, Vocabulary

__all__ = [
    "AppConfig",
    "load_config",
    "AttentionMaskKind",
    "ConversationExample",
    "CorpusClass",
    "SequenceLayout",
    "Turn",
    "MaskedSequence",
    "RemaskStrategy",
    "Sequence",
    "forward_mask",
    "reverse_transition",
    "EngineError",
    "Stream",
    "stream_rng",
    "StagePipeline",
    "TrainStage",
    "MASK_TOKEN",
    "Vocabulary",
]
