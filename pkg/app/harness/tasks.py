"""Synthetic grid-caption tasks, corpus generation and the ground-truth predictor."""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ..adapters.predictor import MaskPredictor, PredictionGrid, PredictorInput
from ..core.config import TaskConfig
from ..core.conversation import (
    AttentionMaskKind,
    ConversationExample,
    CorpusClass,
    Role,
    SequenceLayout,
    SyntheticImage,
    Turn,
    apply_tag_policy,
    layout,
    write_jsonl,
)
from ..core.errors import ImpossibleConditionError, ValidationError
from ..core.seeding import Stream, stream_rng
from ..core.stages import TrainStage
from ..core.vocab import Vocabulary

logger = logging.getLogger(__name__)

FAMILIES = ("caption", "color", "count", "copy")
COPY_LENGTH = 2
_ENUMERATE_LIMIT = 1 << 16


class Split(Enum):
    TRAIN = "train"
    EVAL = "eval"
    ALL = "all"


@dataclass(frozen=True)
class GridCaptionTask:
    """
    Grids of (shape, color) cells and the token grammar describing them.

    Content ids, in order: counts 0..H*W, colors, shapes, then the query
    tokens Q_CAPTION, Q_COLOR, Q_COUNT, Q_COPY. A cell id is
    ``shape * n_colors + color``.
    """
    height: int = 2
    width: int = 2
    n_shapes: int = 2
    n_colors: int = 2
    family: str = "caption"
    with_tags: bool = True

    def __post_init__(self):
        if not (1 <= self.height <= 4 and 1 <= self.width <= 4):
            raise ValidationError(f"grid must be between 1x1 and 4x4, got {self.height}x{self.width}")
        if self.n_shapes < 1 or self.n_colors < 1:
            raise ValidationError("task needs at least one shape and one color")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown task family {self.family!r}; expected one of {FAMILIES}")

    @classmethod
    def from_config(cls, cfg: TaskConfig, family: Optional[str] = None) -> "GridCaptionTask":
        return cls(cfg.height, cfg.width, cfg.n_shapes, cfg.n_colors, family or cfg.family, cfg.with_tags)

    # -- token layout -----------------------------------------------------

    @property
    def cells(self) -> int:
        return self.height * self.width

    @property
    def n_cell_ids(self) -> int:
        return self.n_shapes * self.n_colors

    def count_token(self, count: int) -> int:
        return count

    def color_token(self, color: int) -> int:
        return self.cells + 1 + color

    def shape_token(self, shape: int) -> int:
        return self.cells + 1 + self.n_colors + shape

    @property
    def q_caption(self) -> int:
        return self.cells + 1 + self.n_colors + self.n_shapes

    @property
    def q_color(self) -> int:
        return self.q_caption + 1

    @property
    def q_count(self) -> int:
        return self.q_caption + 2

    @property
    def q_copy(self) -> int:
        return self.q_caption + 3

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.q_copy + 1, self.with_tags)

    @property
    def corpus_class(self) -> CorpusClass:
        return CorpusClass.REASONING if self.family == "count" else CorpusClass.DIRECT

    @property
    def caption_length(self) -> int:
        return 3 * min(self.cells, self.n_cell_ids)

    @property
    def color_length(self) -> int:
        return min(self.cells, self.n_colors)

    # -- grammar ----------------------------------------------------------

    def caption(self, grid: np.ndarray) -> list[int]:
        """<count><color><shape> per distinct cell kind, in (shape, color) order."""
        counts = np.bincount(grid.reshape(-1), minlength=self.n_cell_ids)
        tokens = []
        for cell in np.flatnonzero(counts):
            shape, color = divmod(int(cell), self.n_colors)
            tokens += [self.count_token(int(counts[cell])), self.color_token(color), self.shape_token(shape)]
        return tokens

    def colors_present(self, grid: np.ndarray) -> list[int]:
        colors = np.unique(grid.reshape(-1) % self.n_colors)
        return [self.color_token(int(c)) for c in colors]

    def pad(self, tokens: list[int], length: int) -> tuple[int, ...]:
        return tuple(tokens) + (self.vocab.eos_id,) * (length - len(tokens))

    def grid_id(self, grid: np.ndarray) -> int:
        gid = 0
        for cell in grid.reshape(-1):
            gid = gid * self.n_cell_ids + int(cell)
        return gid

    def grid_from_id(self, gid: int) -> np.ndarray:
        cells = []
        for _ in range(self.cells):
            gid, cell = divmod(gid, self.n_cell_ids)
            cells.append(cell)
        return np.array(cells[::-1], dtype=np.int64).reshape(self.height, self.width)

    def split_of(self, grid: np.ndarray, eval_percent: int) -> Split:
        """Hash bucket of the grid; the same grid always lands in the same split."""
        bucket = _digest(f"{self.height}x{self.width}:{self.n_cell_ids}:{self.grid_id(grid)}") % 100
        return Split.EVAL if bucket < eval_percent else Split.TRAIN

    # -- copy payloads ----------------------------------------------------

    @property
    def copy_pool(self) -> list[int]:
        return [self.color_token(c) for c in range(self.n_colors)] + \
               [self.shape_token(s) for s in range(self.n_shapes)]

    @property
    def payload_space(self) -> int:
        return len(self.copy_pool) ** COPY_LENGTH

    def payload_id(self, items: tuple[int, ...]) -> int:
        pool = self.copy_pool
        pid = 0
        for token in items:
            pid = pid * len(pool) + pool.index(token)
        return pid

    def payload_from_id(self, pid: int) -> tuple[int, ...]:
        pool = self.copy_pool
        items = []
        for _ in range(COPY_LENGTH):
            pid, i = divmod(pid, len(pool))
            items.append(pool[i])
        return tuple(items[::-1])

    def held_out_payloads(self, eval_percent: int) -> frozenset[int]:
        """
        Payload ids of the eval split.

        Ids are ranked by hash and the first ``eval_percent`` of the space
        is held out, at least one id whenever ``eval_percent`` > 0.
        """
        if eval_percent <= 0:
            return frozenset()
        n_pool = len(self.copy_pool)
        ranked = sorted(range(self.payload_space), key=lambda pid: _digest(f"copy:{n_pool}:{pid}"))
        return frozenset(ranked[:max(1, self.payload_space * eval_percent // 100)])

    def payload_split(self, items: tuple[int, ...], eval_percent: int) -> Split:
        """The same payload always lands in the same split."""
        held = self.held_out_payloads(eval_percent)
        return Split.EVAL if self.payload_id(items) in held else Split.TRAIN

    def copy_example(self, items: tuple[int, ...]) -> ConversationExample:
        """Image-free dialogue: echo the payload, then repeat it for a bare query."""
        turns = (
            Turn((self.q_copy,) + items, items),
            Turn((self.q_copy,), items),
        )
        return ConversationExample(turns=turns, image=None, corpus_class=self.corpus_class)

    def example(self, grid: np.ndarray, rng: np.random.Generator) -> ConversationExample:
        """Build one example of this family for ``grid``."""
        if self.family == "copy":
            raise ValidationError("copy examples come from payloads, not grids; use copy_example")
        image = SyntheticImage.from_array(grid)
        if self.family == "caption":
            turns = (Turn((self.q_caption,), self.pad(self.caption(grid), self.caption_length)),)
        elif self.family == "color":
            turns = (Turn((self.q_color,), self.pad(self.colors_present(grid), self.color_length)),)
        else:
            color = int(rng.integers(self.n_colors))
            n = int((grid.reshape(-1) % self.n_colors == color).sum())
            turns = (
                Turn((self.q_caption,), self.pad(self.caption(grid), self.caption_length)),
                Turn((self.q_count, self.color_token(color)), (self.count_token(n),)),
            )
        return ConversationExample(turns=turns, image=image, corpus_class=self.corpus_class)


def _digest(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def _grids_in_split(task: GridCaptionTask, split: Split, eval_percent: int) -> Optional[np.ndarray]:
    space = task.n_cell_ids ** task.cells
    if space > _ENUMERATE_LIMIT:
        return None
    ids = [
        gid for gid in range(space)
        if split is Split.ALL or task.split_of(task.grid_from_id(gid), eval_percent) is split
    ]
    if not ids:
        raise ValidationError(f"no grid of this task falls in the {split.value} split")
    return np.asarray(ids, dtype=np.int64)


def _payloads_in_split(task: GridCaptionTask, split: Split, eval_percent: int) -> np.ndarray:
    held = task.held_out_payloads(eval_percent)
    ids = [
        pid for pid in range(task.payload_space)
        if split is Split.ALL or (pid in held) == (split is Split.EVAL)
    ]
    if not ids:
        raise ValidationError(f"no copy payload of this task falls in the {split.value} split")
    return np.asarray(ids, dtype=np.int64)


def make_corpus(
    task: GridCaptionTask,
    size: int,
    seed: int,
    split: Split = Split.TRAIN,
    eval_percent: int = 10,
) -> list[ConversationExample]:
    """
    Deterministic corpus of ``size`` examples drawn from one split.

    Train and eval are disjoint because the split is a function of the
    grid alone, or of the payload for the image-free copy family.
    """
    if size < 0:
        raise ValidationError(f"corpus size must be >= 0, got {size}")
    split_key = list(Split).index(split)
    rng = stream_rng(seed, Stream.CORPUS, split_key, FAMILIES.index(task.family))
    if task.family == "copy":
        payloads = _payloads_in_split(task, split, eval_percent)
        examples = [
            task.copy_example(task.payload_from_id(int(payloads[rng.integers(payloads.size)])))
            for _ in range(size)
        ]
        logger.debug("made %d copy examples (%s split)", size, split.value)
        return examples

    pool = _grids_in_split(task, split, eval_percent)
    examples = []
    while len(examples) < size:
        if pool is not None:
            grid = task.grid_from_id(int(pool[rng.integers(pool.size)]))
        else:
            grid = rng.integers(task.n_cell_ids, size=(task.height, task.width))
            if split is not Split.ALL and task.split_of(grid, eval_percent) is not split:
                continue
        examples.append(task.example(grid, rng))
    logger.debug("made %d %s examples (%s split)", size, task.family, split.value)
    return examples


def write_corpus(path: Path, examples: Iterable[ConversationExample]) -> int:
    return write_jsonl(path, examples)


def stage_corpus(
    cfg: TaskConfig,
    stage: TrainStage,
    size: int,
    seed: int,
    think_rate: float = 0.5,
) -> list[ConversationExample]:
    """
    Training corpus for one stage.

    ALIGN uses captions, INSTRUCT the configured family, REASONING the
    counting dialogues, and BALANCED tags a DIRECT half (NO_THINK) and a
    REASONING half (THINK at ``think_rate``).
    """
    def family(name: str, n: int) -> list[ConversationExample]:
        return make_corpus(GridCaptionTask.from_config(cfg, name), n, seed, Split.TRAIN, cfg.eval_percent)

    if stage is TrainStage.ALIGN:
        return family("caption", size)
    if stage is TrainStage.INSTRUCT:
        return family(cfg.family, size)
    if stage is TrainStage.REASONING:
        return family("count", size)

    vocab = GridCaptionTask.from_config(cfg).vocab
    tag_rng = stream_rng(seed, Stream.TAGS)
    direct_family = cfg.family if cfg.family in ("caption", "color") else "caption"
    direct = apply_tag_policy(family(direct_family, size - size // 2), CorpusClass.DIRECT, tag_rng, vocab)
    reasoning = apply_tag_policy(
        family("count", size // 2), CorpusClass.REASONING, tag_rng, vocab, think_rate
    )
    return direct + reasoning


class TruthPredictor(MaskPredictor):
    """
    Point mass on the ground-truth responses of known contexts.

    A context is the image grid plus every prompt token; the answer is the
    full response vector over all turns.
    """

    def __init__(self, answers: dict, output_size: int):
        self._answers = answers
        self._output_size = output_size

    @classmethod
    def from_corpus(cls, examples: Iterable[ConversationExample], output_size: int) -> "TruthPredictor":
        answers: dict = {}
        for ex in examples:
            lay = layout(ex)
            key = cls._key(cls._features(lay), lay.tokens, lay.roles, lay.turns)
            value = tuple(lay.tokens[lay.response_positions].tolist())
            if answers.setdefault(key, value) != value:
                raise ValidationError("corpus holds one context with two different answers")
        return cls(answers, output_size)

    @staticmethod
    def _features(lay: SequenceLayout) -> Optional[np.ndarray]:
        if lay.image is None:
            return None
        return lay.image.to_array().reshape(-1, 1).astype(np.float64)

    @staticmethod
    def _key(features, tokens, roles, turns) -> tuple:
        prompt = roles == Role.PROMPT
        image = b"" if features is None else np.ascontiguousarray(features).tobytes()
        return image, tuple(tokens[prompt].tolist()), tuple(turns[prompt].tolist())

    @property
    def output_size(self) -> int:
        return self._output_size

    def input_for(self, lay: SequenceLayout, kind: AttentionMaskKind) -> PredictorInput:
        return PredictorInput.from_layout(lay, kind, self._features(lay))

    def predict(self, inp: PredictorInput) -> PredictionGrid:
        key = self._key(inp.features, inp.tokens, inp.roles, inp.turns)
        if key not in self._answers:
            raise ImpossibleConditionError("context is not in the truth table")
        answer = np.asarray(self._answers[key], dtype=np.int64)
        response = inp.response_positions
        if response.size != answer.size:
            raise ValidationError(
                f"input has {response.size} response positions, truth has {answer.size}"
            )
        rows = np.full((inp.length, self._output_size), 1.0 / self._output_size)
        rows[response] = 0.0
        rows[response, answer] = 1.0
        return PredictionGrid(rows)
