"""Brute-force and closed-form references for tiny instances."""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import beta, betainc

from ..adapters.predictor import MaskPredictor, predict
from ..core.conversation import (
    AttentionMaskKind,
    ConversationExample,
    Turn,
    layout,
    mask_response_pattern,
    open_response_layout,
)
from ..core.diffusion import RemaskStrategy, mask_probability, LINEAR
from ..core.errors import NumericError, OracleRefusal, ValidationError
from ..core.vocab import MASK_TOKEN
from .sampler import keep_count, remask_select, temper

logger = logging.getLogger(__name__)

MAX_FORWARD_LENGTH = 20
MAX_BOUND_LENGTH = 12
MAX_REVERSE_LENGTH = 3
MAX_REVERSE_VOCAB = 3
MAX_REVERSE_STEPS = 3

_SUM_TOL = 1e-12


def popcount(values: np.ndarray, width: int) -> np.ndarray:
    counts = np.zeros_like(values)
    for i in range(width):
        counts += (values >> i) & 1
    return counts


@dataclass(frozen=True, eq=False)
class PatternDistribution:
    """
    Probability of every mask pattern over N positions.

    Bit i of a pattern index is set when position i is masked.
    """
    length: int
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != (2 ** self.length,):
            raise ValidationError("pattern table must have 2**N entries")
        if abs(self.probs.sum() - 1.0) > _SUM_TOL:
            raise NumericError(f"pattern probabilities sum to {self.probs.sum()!r}")

    def probability(self, masked_positions) -> float:
        index = sum(1 << int(i) for i in masked_positions)
        return float(self.probs[index])

    def marginal(self, position: int) -> float:
        """P(position is masked)."""
        hit = (np.arange(self.probs.size) >> position) & 1
        return float(self.probs[hit.astype(bool)].sum())

    def mask_count_distribution(self) -> np.ndarray:
        counts = popcount(np.arange(self.probs.size), self.length)
        return np.bincount(counts, weights=self.probs, minlength=self.length + 1)

    def as_dict(self) -> dict[frozenset, float]:
        return {
            frozenset(i for i in range(self.length) if (p >> i) & 1): float(prob)
            for p, prob in enumerate(self.probs)
        }


def enumerate_forward(length: int, t: float) -> PatternDistribution:
    """Exact forward-corruption law: each pattern with m masks has t^m (1-t)^(N-m)."""
    if length > MAX_FORWARD_LENGTH:
        raise OracleRefusal(f"enumerate_forward handles N <= {MAX_FORWARD_LENGTH}, got {length}")
    if length < 0:
        raise ValidationError("length must be >= 0")
    p = mask_probability(LINEAR, t)
    m = popcount(np.arange(2 ** length, dtype=np.int64), length)
    probs = np.power(p, m) * np.power(1.0 - p, length - m)
    return PatternDistribution(length, probs)


def pattern_weight(m: int, n: int, epsilon: float = 0.0) -> float:
    """
    Integral of t^(m-1) (1-t)^(N-m) under t ~ Uniform(epsilon, 1).

    At epsilon = 0 this is B(m, N-m+1) = (m-1)!(N-m)!/N!.
    """
    w = beta(m, n - m + 1)
    if epsilon > 0.0:
        w *= (1.0 - betainc(m, n - m + 1, epsilon)) / (1.0 - epsilon)
    return float(w)


def exact_bound(
    example: ConversationExample,
    predictor: MaskPredictor,
    epsilon: float = 0.0,
    attention: AttentionMaskKind = AttentionMaskKind.DIALOGUE_CAUSAL,
) -> float:
    """
    Exact t-integral of the masked-response objective by pattern enumeration.

    With ``epsilon`` > 0 the result is the expectation of the Monte Carlo
    estimator that draws t ~ Uniform(epsilon, 1).
    """
    lay = layout(example)
    positions = lay.response_positions
    n = positions.size
    if n == 0:
        raise ValidationError("example has no response tokens")
    if n > MAX_BOUND_LENGTH:
        raise OracleRefusal(f"exact_bound handles N <= {MAX_BOUND_LENGTH}, got {n}")
    if not 0.0 <= epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in [0, 1), got {epsilon}")
    truth = lay.tokens[positions]

    total = 0.0
    for pattern in range(1, 2 ** n):
        masked = mask_response_pattern(lay, pattern)
        hit = masked.tokens[positions] == MASK_TOKEN
        grid = predict(predictor, predictor.input_for(masked, attention))
        nll = -float(grid.log_prob(positions[hit], truth[hit]).sum())
        total += pattern_weight(int(hit.sum()), n, epsilon) * nll
    return total


def _default_history() -> ConversationExample:
    return ConversationExample(turns=(Turn((0,)),))


def enumerate_reverse(
    predictor: MaskPredictor,
    length: int,
    steps: int,
    strategy: RemaskStrategy = RemaskStrategy.RANDOM,
    temperature: float = 1.0,
    history: Optional[ConversationExample] = None,
    attention: AttentionMaskKind = AttentionMaskKind.DIALOGUE_CAUSAL,
) -> dict[tuple[int, ...], float]:
    """
    Exact output law of the sampler over all K^L responses.

    Sums over every token choice and keep set at each step of the ceil
    keep-count schedule, with S clamped to L. Returns every sequence,
    zero-probability ones included.
    """
    vocab = predictor.output_size
    if length > MAX_REVERSE_LENGTH or vocab > MAX_REVERSE_VOCAB or steps > MAX_REVERSE_STEPS:
        raise OracleRefusal(
            f"enumerate_reverse handles L, K, S <= 3, got L={length}, K={vocab}, S={steps}"
        )
    if length < 1 or steps < 1:
        raise ValidationError("length and steps must be >= 1")
    steps = min(steps, length)
    base = open_response_layout(history or _default_history(), length)
    offset = base.total_length - length
    out = {seq: 0.0 for seq in itertools.product(range(vocab), repeat=length)}
    cache: dict[tuple, np.ndarray] = {}

    def rows_for(tokens: np.ndarray, t: float) -> np.ndarray:
        key = tuple(tokens.tolist())
        if key not in cache:
            grid = predict(predictor, predictor.input_for(base.with_tokens(tokens, t), attention))
            cache[key] = grid.probs
        return cache[key]

    def walk(tokens: np.ndarray, k: int, weight: float) -> None:
        if k > steps:
            out[tuple(int(v) for v in tokens[offset:])] += weight
            return
        masked = offset + np.flatnonzero(tokens[offset:] == MASK_TOKEN)
        probs = rows_for(tokens, 1.0 - (k - 1) / steps)[masked]
        choice_probs = temper(probs, temperature)
        n_keep = keep_count(k, length, steps)

        support = [np.flatnonzero(row > 0) for row in choice_probs]
        for chosen in itertools.product(*support):
            chosen = np.asarray(chosen, dtype=np.int64)
            p_tokens = float(np.prod(choice_probs[np.arange(masked.size), chosen]))
            conf = probs[np.arange(masked.size), chosen]
            if strategy is RemaskStrategy.LOW_CONFIDENCE or n_keep == masked.size:
                keep_sets = [(remask_select(chosen, conf, n_keep, strategy, None), 1.0)]
            else:
                subsets = list(itertools.combinations(range(masked.size), n_keep))
                keep_sets = [(np.asarray(s, dtype=np.int64), 1.0 / len(subsets)) for s in subsets]
            for keep, p_keep in keep_sets:
                nxt = tokens.copy()
                nxt[masked[keep]] = chosen[keep]
                walk(nxt, k + 1, weight * p_tokens * p_keep)

    walk(base.tokens.copy(), 1, 1.0)

    total = math.fsum(out.values())
    if abs(total - 1.0) > _SUM_TOL:
        raise NumericError(f"reverse enumeration sums to {total!r}")
    logger.debug("enumerated reverse chain: L=%d K=%d S=%d, %d predictor calls",
                 length, vocab, steps, len(cache))
    return out


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
