"""Shared fixtures: tiny tasks, tabular predictors and small model bundles."""

import numpy as np
import pytest

from app.adapters.bundle import ModelBundle
from app.adapters.predictor import TabularPredictor
from app.adapters.vision import VisionStub
from app.core.config import ModelConfig, TrainConfig
from app.core.conversation import ConversationExample, SyntheticImage, Turn
from app.core.stages import TrainStage
from app.harness.tasks import GridCaptionTask, Split, make_corpus

TINY_MODEL = ModelConfig(d_model=16, n_heads=2, n_blocks=1, d_ff=32, projector_hidden=16, max_len=32)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(
        stage=TrainStage.INSTRUCT,
        batch_size=4,
        steps=3,
        log_every=1,
        quiet=True,
    )
    base.update(overrides)
    return TrainConfig(**base)


def bundle_for(task: GridCaptionTask, cfg: ModelConfig = TINY_MODEL, seed: int = 0) -> ModelBundle:
    vision = VisionStub(task.n_cell_ids, task.height, task.width)
    return ModelBundle.initialize(cfg, task.vocab, vision, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def caption_task() -> GridCaptionTask:
    return GridCaptionTask(height=2, width=2, n_shapes=2, n_colors=2, family="caption")


@pytest.fixture
def caption_corpus(caption_task):
    return make_corpus(caption_task, 24, seed=0, split=Split.TRAIN)


@pytest.fixture
def tiny_bundle(caption_task) -> ModelBundle:
    return bundle_for(caption_task)


@pytest.fixture
def image_example() -> ConversationExample:
    """Two-turn dialogue over a 2x2 grid; every token is a predictable id of the caption task."""
    return ConversationExample(
        turns=(Turn((9,), (2, 5, 7)), Turn((11, 5), (3,))),
        image=SyntheticImage.from_array([[0, 0], [1, 3]]),
    )


@pytest.fixture
def pair_predictor() -> TabularPredictor:
    """Two perfectly correlated binary positions."""
    return TabularPredictor({(0, 0): 0.5, (1, 1): 0.5}, 2)


def response_only(tokens, prompt=(0,)) -> ConversationExample:
    return ConversationExample(turns=(Turn(tuple(prompt), tuple(tokens)),))
