"""Mask-predictor interface and the exact tabular predictor."""

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ..core.conversation import AttentionMaskKind, Role, SequenceLayout, build_attention_mask
from ..core.errors import ImpossibleConditionError, ValidationError
from ..core.vocab import MASK_TOKEN

_ROW_TOL = 1e-6
_JOINT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PredictorInput:
    """
    Everything a predictor conditions on for one corrupted layout.

    ``tokens`` holds MASK_TOKEN at masked positions and feature indices at
    IMAGE positions. ``positions`` are the positional-embedding indices
    (``arange(n)`` unless given explicitly).
    """
    tokens: np.ndarray
    roles: np.ndarray
    turns: np.ndarray
    attention: np.ndarray
    features: Optional[np.ndarray] = None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        n = np.asarray(self.tokens).size
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "roles", np.asarray(self.roles, dtype=np.int8).reshape(-1))
        object.__setattr__(self, "turns", np.asarray(self.turns, dtype=np.int64).reshape(-1))
        attention = np.asarray(self.attention, dtype=bool)
        object.__setattr__(self, "attention", attention)
        positions = np.arange(n) if self.positions is None else np.asarray(self.positions, dtype=np.int64)
        object.__setattr__(self, "positions", positions)

        if self.roles.size != n or self.turns.size != n or positions.size != n:
            raise ValidationError("tokens, roles, turns and positions must have equal length")
        if attention.shape != (n, n):
            raise ValidationError(f"attention matrix has shape {attention.shape}, expected {(n, n)}")
        if n and not attention.any(axis=1).all():
            raise ValidationError("every query position must attend at least one key")

        n_image = int((self.roles == Role.IMAGE).sum())
        if n_image:
            if self.features is None:
                raise ValidationError("IMAGE positions present but no features supplied")
            feats = np.asarray(self.features, dtype=np.float64)
            object.__setattr__(self, "features", feats)
            idx = self.tokens[self.roles == Role.IMAGE]
            if feats.ndim != 2 or idx.min() < 0 or idx.max() >= feats.shape[0]:
                raise ValidationError("IMAGE positions reference features out of range")

    @classmethod
    def from_layout(
        cls,
        lay: SequenceLayout,
        kind: AttentionMaskKind,
        features: Optional[np.ndarray] = None,
    ) -> "PredictorInput":
        return cls(
            tokens=lay.tokens,
            roles=lay.roles,
            turns=lay.turns,
            attention=build_attention_mask(lay, kind),
            features=features,
        )

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    @property
    def masked(self) -> np.ndarray:
        """Boolean vector, True at masked text positions."""
        return (self.tokens == MASK_TOKEN) & (self.roles != Role.IMAGE)

    @property
    def response_positions(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.RESPONSE)


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """Per-position categorical distributions over the predictable ids."""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValidationError("prediction grid must be two-dimensional")
        if probs.size and (np.any(probs < 0) or not np.all(np.isfinite(probs))):
            raise ValidationError("prediction grid has negative or non-finite entries")
        if probs.size and np.max(np.abs(probs.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ValidationError("prediction grid rows must sum to 1")

    @property
    def length(self) -> int:
        return self.probs.shape[0]

    @property
    def output_size(self) -> int:
        return self.probs.shape[1]

    def log_prob(self, positions: np.ndarray, targets: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs[positions, targets])


class MaskPredictor(ABC):
    """Abstract base class for models that fill MASK positions."""

    @property
    @abstractmethod
    def output_size(self) -> int:
        """Number of ids each prediction row covers."""
        pass

    @abstractmethod
    def predict(self, inp: PredictorInput) -> PredictionGrid:
        """Return a distribution for every position of ``inp``."""
        pass

    def input_for(self, lay: SequenceLayout, kind: AttentionMaskKind) -> PredictorInput:
        """Build the predictor input for a layout under an attention regime."""
        return PredictorInput.from_layout(lay, kind)


def predict(model: MaskPredictor, inp: PredictorInput) -> PredictionGrid:
    """Run ``model`` on ``inp`` and check the grid covers every position."""
    grid = model.predict(inp)
    if grid.length != inp.length or grid.output_size != model.output_size:
        raise ValidationError(
            f"predictor returned grid {grid.probs.shape}, expected {(inp.length, model.output_size)}"
        )
    return grid


def tabular_conditional(
    sequences: np.ndarray,
    probs: np.ndarray,
    pattern: np.ndarray,
    output_size: int,
) -> np.ndarray:
    """
    Exact per-position conditionals P(x_i | observed entries of ``pattern``).

    ``sequences`` (M x N) and ``probs`` (M) list the support of the joint;
    ``pattern`` holds MASK_TOKEN at masked positions. Masked rows
    marginalize over the other masked positions; observed rows come out
    as point masses on the observed token.
    """
    pattern = np.asarray(pattern, dtype=np.int64).reshape(-1)
    if pattern.size != sequences.shape[1]:
        raise ValidationError(
            f"pattern has {pattern.size} positions, joint is over {sequences.shape[1]}"
        )
    masked = pattern == MASK_TOKEN
    consistent = np.all((sequences == pattern) | masked, axis=1)
    weights = probs * consistent
    total = weights.sum()
    if total <= 0.0:
        raise ImpossibleConditionError(f"observation {pattern.tolist()} has zero probability")

    rows = np.empty((pattern.size, output_size), dtype=np.float64)
    for i in range(pattern.size):
        rows[i] = np.bincount(sequences[:, i], weights=weights, minlength=output_size) / total
    return rows


class TabularPredictor(MaskPredictor):
    """
    Exact Bayes conditional of an explicit joint over the response positions.

    The joint is held sparsely as ``{sequence tuple: probability}``.
    Rows for IMAGE and PROMPT positions are uniform and never consumed.
    """

    def __init__(self, joint: Mapping[tuple, float], output_size: int):
        if not joint:
            raise ValidationError("joint distribution has empty support")
        lengths = {len(seq) for seq in joint}
        if len(lengths) != 1:
            raise ValidationError("joint support sequences must share one length")

        self._output_size = int(output_size)
        items = sorted((tuple(int(t) for t in seq), float(p)) for seq, p in joint.items() if p > 0)
        self.sequences = np.array([seq for seq, _ in items], dtype=np.int64).reshape(len(items), -1)
        self.probs = np.array([p for _, p in items], dtype=np.float64)

        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > _JOINT_TOL:
            raise ValidationError(f"joint must sum to 1, got {self.probs.sum()!r}")
        if self.sequences.size and (self.sequences.min() < 0 or self.sequences.max() >= output_size):
            raise ValidationError(f"joint support tokens must lie in [0, {output_size})")

    @property
    def output_size(self) -> int:
        return self._output_size

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    @classmethod
    def from_dense(cls, joint: np.ndarray) -> "TabularPredictor":
        """Build from a K x K x ... x K array of sequence probabilities."""
        joint = np.asarray(joint, dtype=np.float64)
        k = joint.shape[0]
        if any(dim != k for dim in joint.shape):
            raise ValidationError("dense joint must have equal extent along every axis")
        support = {idx: float(joint[idx]) for idx in itertools.product(range(k), repeat=joint.ndim)}
        return cls(support, k)

    @classmethod
    def point_mass(cls, sequence, output_size: int) -> "TabularPredictor":
        return cls({tuple(sequence): 1.0}, output_size)

    @classmethod
    def uniform(cls, length: int, output_size: int) -> "TabularPredictor":
        p = float(output_size) ** -length
        return cls({seq: p for seq in itertools.product(range(output_size), repeat=length)}, output_size)

    @classmethod
    def random(
        cls,
        length: int,
        output_size: int,
        rng: np.random.Generator,
        concentration: float = 1.0,
    ) -> "TabularPredictor":
        """Joint drawn from a symmetric Dirichlet over all sequences."""
        support = list(itertools.product(range(output_size), repeat=length))
        weights = rng.dirichlet(np.full(len(support), concentration))
        weights /= weights.sum()
        return cls(dict(zip(support, weights.tolist())), output_size)

    def conditional(self, pattern: np.ndarray) -> np.ndarray:
        return tabular_conditional(self.sequences, self.probs, pattern, self._output_size)

    def predict(self, inp: PredictorInput) -> PredictionGrid:
        response = inp.response_positions
        if response.size != self.length:
            raise ValidationError(
                f"input has {response.size} response positions, joint is over {self.length}"
            )
        rows = np.full((inp.length, self._output_size), 1.0 / self._output_size)
        rows[response] = self.conditional(inp.tokens[response])
        return PredictionGrid(rows)
