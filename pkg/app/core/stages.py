"""Training stages, their frozen parameter groups and corpus requirements."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .conversation import ConversationExample, CorpusClass
from .errors import ConfigurationError

PARAM_GROUPS = ("vision", "language", "projector")


class TrainStage(Enum):
    """Toy-scale stages of visual instruction tuning."""
    ALIGN = "ALIGN"          # projector only, towers frozen
    INSTRUCT = "INSTRUCT"    # single-image instruction data, full fine-tune
    REASONING = "REASONING"  # reasoning-only corpus, full fine-tune
    BALANCED = "BALANCED"    # tag-mixed corpus, full fine-tune

    @property
    def frozen_groups(self) -> frozenset[str]:
        if self is TrainStage.ALIGN:
            return frozenset({"vision", "language"})
        return frozenset()

    @property
    def trainable_groups(self) -> tuple[str, ...]:
        return tuple(g for g in PARAM_GROUPS if g not in self.frozen_groups)


def check_corpus(stage: TrainStage, corpus: Iterable[ConversationExample]) -> None:
    """Raise ConfigurationError if ``corpus`` cannot feed ``stage``."""
    corpus = list(corpus)
    if not corpus:
        raise ConfigurationError(f"{stage.value} needs a non-empty corpus")

    if stage is TrainStage.ALIGN and any(ex.image is None for ex in corpus):
        raise ConfigurationError("ALIGN trains the projector and needs an image in every example")
    if stage is TrainStage.REASONING and any(
        ex.corpus_class is not CorpusClass.REASONING for ex in corpus
    ):
        raise ConfigurationError("REASONING expects a corpus of REASONING-class examples only")
    if stage is TrainStage.BALANCED and any(ex.tag is None for ex in corpus):
        raise ConfigurationError("BALANCED expects a tag-mixed corpus (run apply_tag_policy first)")


@dataclass
class StagePipeline:
    """
    Ordered run of training stages on one model bundle.

    ``advance`` moves to the next stage and fires the change callback;
    it returns None once every stage has been visited.
    """
    stages: list[TrainStage] = field(default_factory=lambda: [TrainStage.INSTRUCT])
    _index: int = -1
    _on_change: Optional[Callable[[TrainStage], None]] = None

    def __post_init__(self):
        if not self.stages:
            raise ConfigurationError("stage pipeline needs at least one stage")

    @property
    def current(self) -> Optional[TrainStage]:
        if 0 <= self._index < len(self.stages):
            return self.stages[self._index]
        return None

    @property
    def finished(self) -> bool:
        return self._index >= len(self.stages)

    def set_callback(self, callback: Callable[[TrainStage], None]) -> None:
        self._on_change = callback

    def advance(self) -> Optional[TrainStage]:
        if self.finished:
            return None
        self._index += 1
        stage = self.current
        if stage is not None and self._on_change:
            self._on_change(stage)
        return stage

    def __iter__(self):
        while (stage := self.advance()) is not None:
            yield stage
