"""Reverse-process generation with random or low-confidence remasking."""

import logging
from typing import Iterable, Optional

import numpy as np

from ..adapters.predictor import MaskPredictor, predict
from ..core.config import SamplerConfig
from ..core.conversation import ConversationExample, SyntheticImage, Turn, open_response_layout
from ..core.diffusion import RemaskStrategy, Sequence, sample_categorical
from ..core.errors import ArgumentError, ValidationError
from ..core.records import DenoiseTrace, TraceStep
from ..core.seeding import Stream, stream_rng
from ..core.vocab import MASK_TOKEN

logger = logging.getLogger(__name__)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def keep_count(k: int, length: int, steps: int) -> int:
    """Positions finalized at step k (1-based): ceil(kL/S) - ceil((k-1)L/S)."""
    return _ceil_div(k * length, steps) - _ceil_div((k - 1) * length, steps)


def temper(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Rows of p^(1/T)/Z; at T = 0 a one-hot on the first argmax."""
    probs = np.atleast_2d(probs)
    if temperature == 0.0:
        out = np.zeros_like(probs)
        out[np.arange(probs.shape[0]), probs.argmax(axis=1)] = 1.0
        return out
    with np.errstate(divide="ignore"):
        logits = np.log(probs) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    out = np.exp(logits)
    return out / out.sum(axis=1, keepdims=True)


def choose_tokens(
    probs: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Pick one token per row and report its confidence.

    Tokens are drawn from the tempered rows (argmax at temperature 0);
    confidence is the untempered probability of the chosen token.
    """
    if temperature < 0:
        raise ArgumentError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0.0:
        tokens = probs.argmax(axis=1)
    else:
        tokens = sample_categorical(temper(probs, temperature), rng)
    return tokens, probs[np.arange(probs.shape[0]), tokens]


def remask_select(
    tokens: np.ndarray,
    confidences: np.ndarray,
    n_keep: int,
    strategy: RemaskStrategy,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Indices (ascending) of the candidates kept this step; the rest revert to MASK.

    LOW_CONFIDENCE keeps the ``n_keep`` highest confidences, ties going to
    the lowest index. RANDOM keeps a uniform ``n_keep``-subset.
    """
    m = len(confidences)
    if len(tokens) != m:
        raise ValidationError("tokens and confidences must have equal length")
    if not 0 <= n_keep <= m:
        raise ArgumentError(f"n_keep must lie in [0, {m}], got {n_keep}")
    if n_keep == m:
        return np.arange(m)
    if strategy is RemaskStrategy.LOW_CONFIDENCE:
        order = np.lexsort((np.arange(m), -np.asarray(confidences, dtype=np.float64)))
        return np.sort(order[:n_keep])
    if strategy is RemaskStrategy.RANDOM:
        return np.sort(rng.choice(m, size=n_keep, replace=False))
    raise ArgumentError(f"unknown remask strategy {strategy}")


def strip_stops(tokens: np.ndarray, stop_ids: Iterable[int], vocab_size: int) -> Sequence:
    """Drop trailing stop ids (EOS, PAD) from a resolved response."""
    stops = set(stop_ids)
    end = len(tokens)
    while end > 0 and int(tokens[end - 1]) in stops:
        end -= 1
    return Sequence(tokens[:end], vocab_size)


def _block_plan(length: int, steps: int, block_length: Optional[int]) -> list[tuple[int, int, int]]:
    """(start, stop, steps) per block; one block covering everything when unset."""
    if block_length is None or block_length >= length:
        return [(0, length, min(steps, length))]
    starts = list(range(0, length, block_length))
    base, extra = divmod(steps, len(starts))
    plan = []
    for b, start in enumerate(starts):
        stop = min(start + block_length, length)
        plan.append((start, stop, max(1, min(base + (b < extra), stop - start))))
    return plan


def generate(
    predictor: MaskPredictor,
    history: ConversationExample,
    cfg: SamplerConfig,
    rng: Optional[np.random.Generator] = None,
    stop_ids: Iterable[int] = (),
) -> tuple[Sequence, DenoiseTrace]:
    """
    Resolve a fully masked response of ``cfg.gen_length`` positions.

    The time grid is t_k = 1 - k/S with S clamped to the length. At step
    k every MASK position is predicted, ``keep_count(k, L, S)`` of the
    choices are finalized and the rest revert to MASK. Finalized tokens
    never change. Trailing ``stop_ids`` are stripped from the result.

    Returns:
        The response and the per-step trace.
    """
    length = cfg.gen_length
    if length < 1:
        raise ValidationError(f"generation length must be >= 1, got {length}")
    if cfg.steps < 1:
        raise ValidationError(f"steps must be >= 1, got {cfg.steps}")
    rng = stream_rng(cfg.seed, Stream.SAMPLING) if rng is None else rng

    lay = open_response_layout(history, length)
    offset = lay.total_length - length
    tokens = lay.tokens.copy()
    trace = DenoiseTrace(gen_length=length)
    step_no = 0

    for start, stop, steps in _block_plan(length, cfg.steps, cfg.block_length):
        block = np.arange(offset + start, offset + stop)
        for k in range(1, steps + 1):
            t, s = 1.0 - (k - 1) / steps, 1.0 - k / steps
            grid = predict(predictor, predictor.input_for(lay.with_tokens(tokens, t), cfg.attention))
            masked = block[tokens[block] == MASK_TOKEN]
            chosen, conf = choose_tokens(grid.probs[masked], cfg.temperature, rng)
            keep = remask_select(chosen, conf, keep_count(k, stop - start, steps), cfg.strategy, rng)
            tokens[masked[keep]] = chosen[keep]
            step_no += 1
            trace.steps.append(TraceStep(
                step=step_no,
                t=t,
                s=s,
                finalized=(masked[keep] - offset).tolist(),
                confidences=conf[keep].tolist(),
            ))

    response = tokens[offset:]
    if np.any(response == MASK_TOKEN):
        raise ValidationError("generation ended with MASK positions left")
    logger.debug("generated %d tokens in %d steps", length, step_no)
    return strip_stops(response, stop_ids, predictor.output_size), trace


def resolve(
    predictor: MaskPredictor,
    history: ConversationExample,
    cfg: SamplerConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, DenoiseTrace]:
    """Like ``generate`` but keeps the full fixed-length response."""
    response, trace = generate(predictor, history, cfg, rng)
    return response.tokens, trace


def multi_turn_chat(
    predictor: MaskPredictor,
    prompts: list,
    cfg: SamplerConfig,
    image: Optional[SyntheticImage] = None,
    stop_ids: Iterable[int] = (),
    rng: Optional[np.random.Generator] = None,
) -> list[Sequence]:
    """
    Answer ``prompts`` in order, each turn seeing earlier turns as clean context.

    The full fixed-length response of each turn is appended to the history;
    the returned responses have ``stop_ids`` stripped.
    """
    if not prompts:
        raise ValidationError("multi_turn_chat needs at least one prompt")
    rng = stream_rng(cfg.seed, Stream.SAMPLING) if rng is None else rng
    stop_ids = tuple(stop_ids)

    history = ConversationExample(turns=(Turn(tuple(prompts[0])),), image=image)
    responses = []
    for k, prompt in enumerate(prompts):
        if k:
            history = history.with_prompt(prompt)
        full, _ = resolve(predictor, history, cfg, rng)
        history = history.with_response(full.tolist())
        responses.append(strip_stops(full, stop_ids, predictor.output_size))
    return responses
