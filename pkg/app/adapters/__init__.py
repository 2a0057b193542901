"""Mask predictors behind one interface: tabular joints and the numpy transformer bundle."""

from .bundle import ModelBundle, loss_gradients
from .checkpoint import load_checkpoint, save_checkpoint
from .predictor import MaskPredictor, PredictionGrid, PredictorInput, TabularPredictor
from .transformer import TinyTransformer
from .vision import Projector, VisionStub

__all__ = [
    "ModelBundle",
    "loss_gradients",
    "load_checkpoint",
    "save_checkpoint",
    "MaskPredictor",
    "PredictionGrid",
    "PredictorInput",
    "TabularPredictor",
    "TinyTransformer",
    "Projector",
    "VisionStub",
]
