"""Monte Carlo response objective and the staged training loop."""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..adapters.bundle import ModelBundle, ObjectiveTerm, loss_gradients
from ..adapters.checkpoint import save_checkpoint
from ..adapters.predictor import MaskPredictor, predict
from ..core.config import TrainConfig
from ..core.conversation import (
    AttentionMaskKind,
    ConversationExample,
    SequenceLayout,
    corrupt_responses,
    layout,
)
from ..core.diffusion import LINEAR, NoiseSchedule
from ..core.errors import ArgumentError, ValidationError
from ..core.records import LossReport, MetricsRow, write_metrics_csv
from ..core.seeding import Stream, stream_rng
from ..core.stages import StagePipeline, TrainStage, check_corpus
from ..core.vocab import MASK_TOKEN
from .optimizer import clip_grad_norm, sgd_step

logger = logging.getLogger(__name__)


def _response_truth(lay: SequenceLayout, output_size: int) -> tuple[np.ndarray, np.ndarray]:
    positions = lay.response_positions
    truth = lay.tokens[positions]
    if positions.size == 0:
        raise ValidationError("example has no response tokens")
    if truth.min() < 0 or truth.max() >= output_size:
        raise ValidationError(f"response tokens must be predictable ids in [0, {output_size})")
    return positions, truth


def mc_loss(
    example: ConversationExample,
    predictor: MaskPredictor,
    rng: np.random.Generator,
    n_draws: int,
    epsilon: float = 1e-3,
    attention: AttentionMaskKind = AttentionMaskKind.DIALOGUE_CAUSAL,
    schedule: NoiseSchedule = LINEAR,
) -> LossReport:
    """
    Average of ``n_draws`` draws of (1/t) * sum of -log p(true token) over masked responses.

    Each draw samples t ~ Uniform(epsilon, 1) and masks every response
    position of every turn at that one shared rate.
    """
    if n_draws < 1:
        raise ArgumentError(f"n_draws must be >= 1, got {n_draws}")
    lay = layout(example)
    positions, truth = _response_truth(lay, predictor.output_size)

    draws, counts, ts = [], [], []
    for _ in range(n_draws):
        t = float(rng.uniform(epsilon, 1.0))
        corrupted = corrupt_responses(lay, t, rng, schedule)
        hit = corrupted.tokens[positions] == MASK_TOKEN
        value = 0.0
        if hit.any():
            grid = predict(predictor, predictor.input_for(corrupted, attention))
            value = -float(grid.log_prob(positions[hit], truth[hit]).sum()) / t
        draws.append(value)
        counts.append(int(hit.sum()))
        ts.append(t)

    return LossReport(objective=float(np.mean(draws)), draws=draws, masked_counts=counts, t_values=ts)


@dataclass
class TrainResult:
    """Outcome of one stage."""
    bundle: ModelBundle
    stage: TrainStage
    metrics: list[MetricsRow] = field(default_factory=list)


def _objective_term(
    bundle: ModelBundle,
    lay: SequenceLayout,
    rng: np.random.Generator,
    epsilon: float,
    attention: AttentionMaskKind,
) -> tuple[ObjectiveTerm, float, int, int]:
    positions = lay.response_positions
    t = float(rng.uniform(epsilon, 1.0))
    corrupted = corrupt_responses(lay, t, rng)
    hit = corrupted.tokens[positions] == MASK_TOKEN
    targets = np.full(lay.total_length, -1, dtype=np.int64)
    targets[positions[hit]] = lay.tokens[positions[hit]]
    term = ObjectiveTerm(bundle.input_for(corrupted, attention), targets, 1.0 / t)
    return term, t, int(hit.sum()), int(positions.size)


def train_stage(
    cfg: TrainConfig,
    bundle: ModelBundle,
    corpus: Sequence[ConversationExample],
    seed: int,
    stage: Optional[TrainStage] = None,
    stage_index: int = 0,
    metrics_path: Optional[Path] = None,
) -> TrainResult:
    """
    Run ``cfg.steps`` momentum-SGD steps of one stage on ``corpus``.

    Groups frozen by the stage keep their exact bytes. Each batch item
    draws its masking from its own (seed, stage_index, step, item) stream,
    so results do not depend on ``cfg.workers``.
    """
    stage = cfg.stage if stage is None else stage
    check_corpus(stage, corpus)
    layouts = [layout(ex) for ex in corpus]
    for lay in layouts:
        _response_truth(lay, bundle.output_size)

    frozen = stage.frozen_groups
    trainable = [n for n in bundle.params if bundle.group_of(n) not in frozen]
    order_rng = stream_rng(seed, Stream.DATA_ORDER, stage_index)
    order = order_rng.permutation(len(layouts))
    cursor = 0

    params, velocity = dict(bundle.params), {}
    metrics: list[MetricsRow] = []
    window: list[tuple[float, float, float]] = []

    logger.info("stage %s: %d examples, %d steps, frozen=%s",
                stage.value, len(layouts), cfg.steps, sorted(frozen) or "none")

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    progress = tqdm(
        range(1, cfg.steps + 1),
        desc=stage.value.lower(),
        disable=cfg.quiet or not sys.stderr.isatty(),
        leave=False,
    )
    try:
        for step in progress:
            batch = []
            for _ in range(cfg.batch_size):
                if cursor == len(order):
                    order, cursor = order_rng.permutation(len(layouts)), 0
                batch.append(layouts[order[cursor]])
                cursor += 1

            items = []
            for i, lay in enumerate(batch):
                rng = stream_rng(seed, Stream.MASKING, stage_index, step, i)
                items.append(_objective_term(bundle, lay, rng, cfg.epsilon, cfg.attention))

            def item_gradient(item):
                return loss_gradients(bundle, [item[0]], params)

            results = list(executor.map(item_gradient, items)) if executor else [item_gradient(it) for it in items]

            loss = 0.0
            grads = {n: np.zeros_like(p) for n, p in params.items()}
            for item_loss, item_grads in results:
                loss += item_loss
                for n, g in item_grads.items():
                    grads[n] += g
            scale = 1.0 / len(batch)
            loss *= scale
            for n in grads:
                grads[n] *= scale

            grads, norm = clip_grad_norm(grads, cfg.max_grad_norm, trainable)
            params, velocity = sgd_step(params, grads, cfg.rates, cfg.momentum, velocity, frozen)

            t_mean = float(np.mean([it[1] for it in items]))
            masked_frac = sum(it[2] for it in items) / max(1, sum(it[3] for it in items))
            window.append((loss, t_mean, masked_frac))
            if step % cfg.log_every == 0 or step == cfg.steps:
                row = MetricsRow(step, *map(float, np.mean(window, axis=0)), stage=stage.value)
                metrics.append(row)
                window.clear()
                progress.set_postfix(loss=f"{row.loss:.3f}")
                logger.debug("step %d loss %.4f grad_norm %.3f", step, row.loss, norm)
    finally:
        progress.close()
        if executor:
            executor.shutdown()

    trained = bundle.with_params(params)
    if metrics_path is not None:
        write_metrics_csv(metrics_path, metrics)
    if metrics:
        logger.info("stage %s done: loss %.4f -> %.4f", stage.value, metrics[0].loss, metrics[-1].loss)
    return TrainResult(trained, stage, metrics)


def run_pipeline(
    cfg: TrainConfig,
    bundle: ModelBundle,
    corpus_for: Callable[[TrainStage], Sequence[ConversationExample]],
    seed: int,
    out_dir: Optional[Path] = None,
) -> list[TrainResult]:
    """
    Train the stages of ``cfg.stage_plan`` in order on one bundle.

    ``corpus_for`` supplies the corpus of each stage. With ``out_dir`` set,
    every stage writes ``<stage>.ckpt`` and ``metrics_<stage>.csv``.
    """
    pipeline = StagePipeline(cfg.stage_plan)
    pipeline.set_callback(lambda stage: logger.info("entering stage %s", stage.value))

    results = []
    for index, stage in enumerate(pipeline):
        name = stage.value.lower()
        metrics_path = Path(out_dir) / f"metrics_{name}.csv" if out_dir else None
        result = train_stage(cfg, bundle, corpus_for(stage), seed, stage, index, metrics_path)
        if out_dir:
            save_checkpoint(Path(out_dir) / f"{name}.ckpt", result.bundle, stage.value)
        bundle = result.bundle
        results.append(result)
    return results
