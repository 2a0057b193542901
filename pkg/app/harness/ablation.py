"""Side-by-side ablation over attention regimes and remasking strategies."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np
from rich.table import Table

from ..adapters.bundle import ModelBundle
from ..core.config import AppConfig
from ..core.conversation import AttentionMaskKind, ConversationExample
from ..core.errors import ConfigurationError
from ..core.records import EvalReport
from ..engine.trainer import train_stage
from .evaluation import evaluate

logger = logging.getLogger(__name__)


def cell_label(attention: AttentionMaskKind, strategy) -> str:
    return f"{attention.value}/{strategy.value}"


def run_ablation(
    cfg: AppConfig,
    initial: ModelBundle,
    train_corpus: Sequence[ConversationExample],
    eval_corpus: Sequence[ConversationExample],
) -> EvalReport:
    """
    Train one model per attention regime and evaluate it per remasking strategy.

    Every cell starts from ``initial`` and uses the same seed, so cells
    differ only in the ablated factor. Rows follow the order of
    ``cfg.ablation``; the top-level figures are the means over rows.
    """
    cells = cfg.ablation
    attentions = list(cells.attentions)
    strategies = list(cells.strategies)
    if not attentions or not strategies:
        raise ConfigurationError("ablation needs at least one attention kind and one strategy")

    def run_attention(attention: AttentionMaskKind) -> list:
        train_cfg = replace(cfg.train, attention=attention, quiet=True)
        trained = train_stage(train_cfg, initial, train_corpus, cfg.seed).bundle
        logger.info("ablation: trained with %s attention", attention.value)
        rows = []
        for strategy in strategies:
            sampler = replace(cfg.sampler, attention=attention, strategy=strategy)
            report = evaluate(trained, eval_corpus, sampler, cfg.eval, train_cfg, cfg.seed,
                              label=cell_label(attention, strategy))
            rows.extend(report.rows)
        return rows

    if cells.workers > 1:
        with ThreadPoolExecutor(max_workers=cells.workers) as executor:
            per_attention = list(executor.map(run_attention, attentions))
    else:
        per_attention = [run_attention(a) for a in attentions]

    rows = [row for group in per_attention for row in group]
    return EvalReport(
        exact_match=float(np.mean([r.exact_match for r in rows])),
        token_accuracy=float(np.mean([r.token_accuracy for r in rows])),
        mean_bound=float(np.mean([r.mean_bound for r in rows])),
        n_examples=rows[0].n_examples,
        rows=rows,
    )


def render_table(report: EvalReport, title: str = "Ablation") -> Table:
    table = Table(title=title)
    table.add_column("attention / remasking")
    table.add_column("exact match", justify="right")
    table.add_column("token acc.", justify="right")
    table.add_column("mean bound", justify="right")
    table.add_column("n", justify="right")
    for row in report.rows:
        table.add_row(row.label, f"{row.exact_match:.3f}", f"{row.token_accuracy:.3f}",
                      f"{row.mean_bound:.3f}", str(row.n_examples))
    return table
