"""Closed-form masked diffusion: noise schedule, forward corruption, reverse law."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError, DomainError, ValidationError
from .vocab import MASK_TOKEN

# Column 0 of a reverse-transition row is the probability of staying masked.
STAY_MASK = 0

_NORMALIZATION_TOL = 1e-9


class ScheduleKind(Enum):
    """Supported noise schedules."""
    LINEAR = "linear"  # alpha(t) = 1 - t


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone map from noise level t to the keep probability alpha(t)."""
    kind: ScheduleKind = ScheduleKind.LINEAR


LINEAR = NoiseSchedule(ScheduleKind.LINEAR)


class RemaskStrategy(Enum):
    """Rule for choosing which fresh predictions are kept at a reverse step."""
    RANDOM = "random"
    LOW_CONFIDENCE = "low_confidence"


@dataclass(frozen=True, eq=False)
class Sequence:
    """A clean token sequence over a vocabulary of size K."""
    tokens: np.ndarray
    vocab_size: int

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "tokens", tokens)
        if self.vocab_size < 2:
            raise ValidationError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ValidationError(f"tokens must lie in [0, {self.vocab_size})")

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    def to_list(self) -> list[int]:
        return [int(t) for t in self.tokens]


@dataclass(frozen=True, eq=False)
class MaskedSequence:
    """A sequence whose entries are tokens or MASK_TOKEN, tagged with its noise level."""
    tokens: np.ndarray
    vocab_size: int
    noise_level: float = 1.0

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "tokens", tokens)
        visible = tokens[tokens != MASK_TOKEN]
        if visible.size and (visible.min() < 0 or visible.max() >= self.vocab_size):
            raise ValidationError(f"unmasked tokens must lie in [0, {self.vocab_size})")
        _check_level(self.noise_level)

    @property
    def mask(self) -> np.ndarray:
        """Boolean vector, True where the entry is MASK."""
        return self.tokens == MASK_TOKEN

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    @classmethod
    def fully_masked(cls, length: int, vocab_size: int) -> "MaskedSequence":
        return cls(np.full(length, MASK_TOKEN, dtype=np.int64), vocab_size, 1.0)


def _check_level(t: float) -> None:
    if not (0.0 <= t <= 1.0) or np.isnan(t):
        raise DomainError(f"noise level must lie in [0, 1], got {t}")


def alpha(schedule: NoiseSchedule, t: float) -> float:
    """Keep probability alpha(t); 1 at t=0, 0 at t=1."""
    _check_level(t)
    if schedule.kind is ScheduleKind.LINEAR:
        return 1.0 - float(t)
    raise ValidationError(f"unsupported schedule {schedule.kind}")


def mask_probability(schedule: NoiseSchedule, t: float) -> float:
    """Per-position masking probability 1 - alpha(t)."""
    _check_level(t)
    if schedule.kind is ScheduleKind.LINEAR:
        return float(t)
    return 1.0 - alpha(schedule, t)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Inverse-CDF sampling over a fixed id ordering, one draw per row.

    Rows are renormalized by their cumulative total, so ids with zero
    probability are never returned.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[:, -1:]
    u = rng.random(probs.shape[0])
    idx = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def forward_mask(
    x0: Sequence,
    t: float,
    rng: np.random.Generator,
    schedule: NoiseSchedule = LINEAR,
) -> MaskedSequence:
    """Independently replace each token with MASK with probability 1 - alpha(t)."""
    p = mask_probability(schedule, t)
    masked = rng.random(x0.length) < p
    tokens = np.where(masked, MASK_TOKEN, x0.tokens)
    return MaskedSequence(tokens, x0.vocab_size, float(t))


def check_distribution(predicted: np.ndarray, tol: float = _NORMALIZATION_TOL) -> np.ndarray:
    """Return ``predicted`` as float64 after checking it is a probability vector."""
    predicted = np.asarray(predicted, dtype=np.float64)
    if predicted.ndim != 1 or predicted.size == 0:
        raise ValidationError("predicted distribution must be a non-empty vector")
    if np.any(predicted < 0) or not np.all(np.isfinite(predicted)):
        raise ValidationError("predicted distribution has negative or non-finite entries")
    total = predicted.sum()
    if abs(total - 1.0) > tol:
        raise ValidationError(f"predicted distribution sums to {total!r}, not 1")
    return predicted


def reverse_transition(
    t: float,
    s: float,
    predicted: np.ndarray,
    schedule: NoiseSchedule = LINEAR,
) -> np.ndarray:
    """
    Law of one MASK position moving from noise level t to s < t.

    Returns a vector of length K + 1: entry ``STAY_MASK`` is the
    probability of remaining masked, entry ``1 + v`` the probability of
    resolving to token v. Non-MASK positions are carried over unchanged
    and are not described by this vector.
    """
    _check_level(t)
    _check_level(s)
    if s >= t:
        raise ArgumentError(f"reverse step needs s < t, got s={s}, t={t}")
    predicted = check_distribution(predicted)

    stay = mask_probability(schedule, s) / mask_probability(schedule, t)
    out = np.empty(predicted.size + 1, dtype=np.float64)
    out[STAY_MASK] = stay
    out[1:] = (1.0 - stay) * predicted
    return out


def reverse_step(
    xt: MaskedSequence,
    predicted: np.ndarray,
    s: float,
    rng: np.random.Generator,
    schedule: NoiseSchedule = LINEAR,
) -> MaskedSequence:
    """
    Sample x_s from x_t given per-position predictions (N x K).

    Only MASK positions are resampled; every other entry is copied.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    if predicted.shape != (xt.length, xt.vocab_size):
        raise ValidationError(
            f"prediction grid has shape {predicted.shape}, expected {(xt.length, xt.vocab_size)}"
        )
    tokens = xt.tokens.copy()
    positions = np.flatnonzero(xt.mask)
    if positions.size:
        rows = np.stack([
            reverse_transition(xt.noise_level, s, predicted[i], schedule) for i in positions
        ])
        outcome = sample_categorical(rows, rng)
        resolved = outcome != STAY_MASK
        tokens[positions[resolved]] = outcome[resolved] - 1
    return MaskedSequence(tokens, xt.vocab_size, float(s))
