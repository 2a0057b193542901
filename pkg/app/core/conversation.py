"""Multi-turn multimodal examples, flattened layouts and attention masks."""

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .diffusion import LINEAR, NoiseSchedule, mask_probability
from .errors import ConfigurationError, ValidationError
from .vocab import MASK_TOKEN, Vocabulary

logger = logging.getLogger(__name__)


class Role(IntEnum):
    """Segment role of a layout position."""
    IMAGE = 0
    PROMPT = 1
    RESPONSE = 2


class Tag(Enum):
    """Thinking tag applied uniformly to every prompt of an example."""
    THINK = "think"
    NO_THINK = "no_think"
    NONE = "none"


class CorpusClass(Enum):
    """Which corpus an example belongs to for tag mixing."""
    DIRECT = "DIRECT"
    REASONING = "REASONING"


class AttentionMaskKind(Enum):
    """Attention regimes over a flattened dialogue."""
    CAUSAL = "causal"
    DIALOGUE_CAUSAL = "dialogue_causal"
    NO_MASK = "none"


@dataclass(frozen=True)
class SyntheticImage:
    """An H x W grid of integer cell ids."""
    grid: tuple[tuple[int, ...], ...]

    @classmethod
    def from_array(cls, grid) -> "SyntheticImage":
        return cls(tuple(tuple(int(c) for c in row) for row in grid))

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0]) if self.grid else 0

    @property
    def feature_count(self) -> int:
        return self.height * self.width

    def to_array(self) -> np.ndarray:
        return np.asarray(self.grid, dtype=np.int64).reshape(self.height, self.width)


@dataclass(frozen=True)
class Turn:
    """One prompt and its response (the response may be empty on a trailing turn)."""
    prompt: tuple[int, ...]
    response: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        object.__setattr__(self, "response", tuple(int(t) for t in self.response))


@dataclass(frozen=True)
class ConversationExample:
    """The tuple (image?, prompt 1, response 1, prompt 2, response 2, ...)."""
    turns: tuple[Turn, ...]
    image: Optional[SyntheticImage] = None
    tag: Optional[Tag] = None  # None until a tag policy has been applied
    corpus_class: CorpusClass = CorpusClass.DIRECT

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))

    @property
    def response_length(self) -> int:
        return sum(len(turn.response) for turn in self.turns)

    @property
    def awaiting_response(self) -> bool:
        """True when the trailing turn has a prompt but no response yet."""
        return bool(self.turns) and not self.turns[-1].response

    def with_prompt(self, prompt: Iterable[int]) -> "ConversationExample":
        return replace(self, turns=self.turns + (Turn(tuple(prompt)),))

    def with_response(self, response: Iterable[int]) -> "ConversationExample":
        if not self.awaiting_response:
            raise ValidationError("example has no trailing prompt awaiting a response")
        last = Turn(self.turns[-1].prompt, tuple(response))
        return replace(self, turns=self.turns[:-1] + (last,))


class LayoutEntry(NamedTuple):
    position: int
    role: Role
    turn_index: int
    ref: int  # token id, feature index for IMAGE, or MASK_TOKEN


@dataclass(frozen=True, eq=False)
class SequenceLayout:
    """
    Flattened position map of an example.

    ``tokens`` holds token ids at PROMPT/RESPONSE positions (MASK_TOKEN
    where masked) and feature indices at IMAGE positions. Turn indices
    are 0-based; the image block shares turn 0 with the first dialogue
    turn.
    """
    tokens: np.ndarray
    roles: np.ndarray
    turns: np.ndarray
    image: Optional[SyntheticImage] = None
    tag: Optional[Tag] = None
    corpus_class: CorpusClass = CorpusClass.DIRECT
    noise_level: float = 0.0

    @property
    def total_length(self) -> int:
        return int(self.tokens.size)

    @property
    def entries(self) -> list[LayoutEntry]:
        return [
            LayoutEntry(i, Role(int(r)), int(k), int(tok))
            for i, (tok, r, k) in enumerate(zip(self.tokens, self.roles, self.turns))
        ]

    @property
    def role_string(self) -> str:
        return "".join("IPR"[int(r)] for r in self.roles)

    def positions(self, role: Role, turn: Optional[int] = None) -> np.ndarray:
        hit = self.roles == int(role)
        if turn is not None:
            hit &= self.turns == turn
        return np.flatnonzero(hit)

    @property
    def response_positions(self) -> np.ndarray:
        return self.positions(Role.RESPONSE)

    @property
    def masked_positions(self) -> np.ndarray:
        return np.flatnonzero((self.tokens == MASK_TOKEN) & (self.roles != int(Role.IMAGE)))

    def with_tokens(self, tokens: np.ndarray, noise_level: Optional[float] = None) -> "SequenceLayout":
        level = self.noise_level if noise_level is None else noise_level
        return replace(self, tokens=np.asarray(tokens, dtype=np.int64), noise_level=level)


def validate_example(example: ConversationExample) -> None:
    """Raise ValidationError unless the example can be laid out."""
    if not example.turns:
        raise ValidationError("example must have at least one turn")
    for k, turn in enumerate(example.turns):
        if not turn.prompt:
            raise ValidationError(f"turn {k} has an empty prompt")
        if not turn.response and k != len(example.turns) - 1:
            raise ValidationError(f"turn {k} has an empty response but is not the last turn")
    if example.image is not None:
        widths = {len(row) for row in example.image.grid}
        if example.image.height == 0 or len(widths) != 1 or 0 in widths:
            raise ValidationError("image grid must be a non-empty rectangle")


def layout(example: ConversationExample) -> SequenceLayout:
    """Concatenate image features, then (prompt, response) per turn, densely from 0."""
    validate_example(example)
    tokens: list[int] = []
    roles: list[int] = []
    turns: list[int] = []

    if example.image is not None:
        n = example.image.feature_count
        tokens.extend(range(n))
        roles.extend([Role.IMAGE] * n)
        turns.extend([0] * n)

    for k, turn in enumerate(example.turns):
        tokens.extend(turn.prompt)
        roles.extend([Role.PROMPT] * len(turn.prompt))
        turns.extend([k] * len(turn.prompt))
        tokens.extend(turn.response)
        roles.extend([Role.RESPONSE] * len(turn.response))
        turns.extend([k] * len(turn.response))

    return SequenceLayout(
        tokens=np.asarray(tokens, dtype=np.int64),
        roles=np.asarray(roles, dtype=np.int8),
        turns=np.asarray(turns, dtype=np.int64),
        image=example.image,
        tag=example.tag,
        corpus_class=example.corpus_class,
    )


def example_from_layout(lay: SequenceLayout) -> ConversationExample:
    """Rebuild the example a clean layout was made from."""
    text = lay.roles != int(Role.IMAGE)
    if np.any(lay.tokens[text] == MASK_TOKEN):
        raise ValidationError("cannot rebuild an example from a layout with MASK entries")

    turns = []
    for k in np.unique(lay.turns[text]):
        prompt = lay.tokens[lay.positions(Role.PROMPT, int(k))]
        response = lay.tokens[lay.positions(Role.RESPONSE, int(k))]
        turns.append(Turn(tuple(prompt.tolist()), tuple(response.tolist())))
    return ConversationExample(
        turns=tuple(turns), image=lay.image, tag=lay.tag, corpus_class=lay.corpus_class,
    )


def open_response_layout(history: ConversationExample, gen_length: int) -> SequenceLayout:
    """Layout of ``history`` followed by ``gen_length`` MASK response positions."""
    if not history.awaiting_response:
        raise ValidationError("history must end with a prompt awaiting a response")
    if gen_length < 1:
        raise ValidationError(f"generation length must be >= 1, got {gen_length}")
    base = layout(history)
    last_turn = len(history.turns) - 1
    return replace(
        base,
        tokens=np.concatenate([base.tokens, np.full(gen_length, MASK_TOKEN, dtype=np.int64)]),
        roles=np.concatenate([base.roles, np.full(gen_length, Role.RESPONSE, dtype=np.int8)]),
        turns=np.concatenate([base.turns, np.full(gen_length, last_turn, dtype=np.int64)]),
        noise_level=1.0,
    )


def corrupt_responses(
    lay: SequenceLayout,
    t: float,
    rng: np.random.Generator,
    schedule: NoiseSchedule = LINEAR,
) -> SequenceLayout:
    """
    Mask every RESPONSE position independently with probability t.

    One t is shared by all turns. IMAGE and PROMPT positions are untouched.
    """
    p = mask_probability(schedule, t)
    positions = lay.response_positions
    hit = rng.random(positions.size) < p
    tokens = lay.tokens.copy()
    tokens[positions[hit]] = MASK_TOKEN
    return lay.with_tokens(tokens, float(t))


def mask_response_pattern(lay: SequenceLayout, pattern: int) -> SequenceLayout:
    """Mask the response positions selected by bit ``i`` of ``pattern``."""
    positions = lay.response_positions
    bits = (pattern >> np.arange(positions.size)) & 1
    tokens = lay.tokens.copy()
    tokens[positions[bits.astype(bool)]] = MASK_TOKEN
    return lay.with_tokens(tokens)


def build_attention_mask(lay: SequenceLayout, kind: AttentionMaskKind) -> np.ndarray:
    """
    Boolean matrix whose entry (q, k) is True iff query q may attend key k.

    CAUSAL: k <= q. DIALOGUE_CAUSAL: turn(k) <= turn(q), so a turn sees
    itself in full and every earlier turn. NO_MASK: everything.
    """
    n = lay.total_length
    if kind is AttentionMaskKind.NO_MASK:
        return np.ones((n, n), dtype=bool)
    if kind is AttentionMaskKind.CAUSAL:
        return np.tril(np.ones((n, n), dtype=bool))
    if kind is AttentionMaskKind.DIALOGUE_CAUSAL:
        return lay.turns[None, :] <= lay.turns[:, None]
    raise ValidationError(f"unknown attention mask kind {kind}")


def apply_tag_policy(
    examples: Iterable[ConversationExample],
    policy: CorpusClass,
    rng: np.random.Generator,
    vocab: Vocabulary,
    think_rate: float = 0.5,
) -> list[ConversationExample]:
    """
    Tag every example as coming from the ``policy`` corpus.

    DIRECT examples get NO_THINK appended to each prompt. REASONING
    examples get THINK with probability ``think_rate``, otherwise NONE.
    """
    tagged = []
    for example in examples:
        if example.tag is not None:
            raise ConfigurationError("example is already tagged")
        if policy is CorpusClass.DIRECT:
            tag, extra = Tag.NO_THINK, (vocab.no_think_id,)
        elif rng.random() < think_rate:
            tag, extra = Tag.THINK, (vocab.think_id,)
        else:
            tag, extra = Tag.NONE, ()
        turns = tuple(Turn(turn.prompt + extra, turn.response) for turn in example.turns)
        tagged.append(replace(example, turns=turns, tag=tag, corpus_class=policy))
    return tagged


# -- JSONL dataset format -------------------------------------------------

def example_to_record(example: ConversationExample) -> dict:
    record = {
        "image": {"grid": [list(row) for row in example.image.grid]} if example.image else None,
        "turns": [
            {"prompt": list(turn.prompt), "response": list(turn.response)}
            for turn in example.turns
        ],
        "class": example.corpus_class.value,
    }
    if example.tag is not None:
        record["tag"] = example.tag.value
    return record


def example_from_record(record: dict) -> ConversationExample:
    try:
        image = record.get("image")
        example = ConversationExample(
            turns=tuple(Turn(t["prompt"], t["response"]) for t in record["turns"]),
            image=SyntheticImage.from_array(image["grid"]) if image else None,
            tag=Tag(record["tag"]) if record.get("tag") else None,
            corpus_class=CorpusClass(record.get("class", CorpusClass.DIRECT.value)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"malformed example record: {e}") from e
    validate_example(example)
    return example


def write_jsonl(path: Path, examples: Iterable[ConversationExample]) -> int:
    """Write one example per line; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for example in examples:
            f.write(json.dumps(example_to_record(example), separators=(",", ":")))
            f.write("\n")
            count += 1
    logger.debug("wrote %d examples to %s", count, path)
    return count


def iter_jsonl(path: Path) -> Iterator[ConversationExample]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({e})") from e
            yield example_from_record(record)


def read_jsonl(path: Path) -> list[ConversationExample]:
    return list(iter_jsonl(path))
