"""Engine-versus-oracle comparison suites behind the ``oracle-check`` command."""

import logging
from enum import Enum

import numpy as np
from rich.table import Table
from scipy.stats import chisquare

from ..adapters.predictor import TabularPredictor
from ..core.config import SamplerConfig
from ..core.conversation import ConversationExample, Turn
from ..core.diffusion import RemaskStrategy, Sequence, forward_mask
from ..core.records import CheckResult, create_check
from ..core.seeding import Stream, stream_rng
from ..engine.oracle import enumerate_forward, enumerate_reverse, exact_bound, total_variation
from ..engine.sampler import resolve
from ..engine.trainer import mc_loss

logger = logging.getLogger(__name__)

P_VALUE_FLOOR = 1e-3
CI_Z = 2.576  # two-sided 99%
TV_LIMIT = 0.01
EPSILON = 1e-3
EPSILON_BIAS_LIMIT = 1e-3  # nats per nat of bound
HALVING_RATIO = 0.6  # first-order bias halves with epsilon


class Suite(Enum):
    FORWARD = "forward"
    BOUND = "bound"
    REVERSE = "reverse"


def response_example(tokens, split: int = 0) -> ConversationExample:
    """
    Example whose responses, read in order, are ``tokens``.

    With ``split`` > 0 the first ``split`` tokens answer a first turn and
    the rest a second turn, so both turns share one noise level.
    """
    tokens = tuple(int(t) for t in tokens)
    if 0 < split < len(tokens):
        return ConversationExample(turns=(Turn((0,), tokens[:split]), Turn((1,), tokens[split:])))
    return ConversationExample(turns=(Turn((0,), tokens),))


def check_forward(seed: int, draws: int, length: int = 4) -> list[CheckResult]:
    """Chi-square of forward_mask pattern frequencies against the exact table."""
    results = []
    x0 = Sequence(np.zeros(length, dtype=np.int64), 2)
    weights = 1 << np.arange(length)
    for i, t in enumerate((0.25, 0.5, 0.75)):
        rng = stream_rng(seed, Stream.ORACLE, 1, i)
        counts = np.zeros(2 ** length)
        for _ in range(draws):
            counts[int(weights[forward_mask(x0, t, rng).mask].sum())] += 1
        exact = enumerate_forward(length, t).probs
        _, p_value = chisquare(counts, exact * draws)
        deviation = float(np.max(np.abs(counts / draws - exact)))
        results.append(create_check("forward", f"N={length},t={t}", p_value, deviation,
                                    p_value > P_VALUE_FLOOR))
    return results


def check_bound(seed: int, draws: int, n_predictors: int = 20, max_length: int = 6) -> list[CheckResult]:
    """
    Monte Carlo objective against the exact bound.

    Covers the single-token cancellation, random tabular predictors at
    N <= ``max_length`` (99% interval around the epsilon-truncated bound)
    and the bias attributable to epsilon.
    """
    results = []
    p = 0.3
    one = TabularPredictor({(0,): p, (1,): 1.0 - p}, 2)
    example = response_example([0])
    report = mc_loss(example, one, stream_rng(seed, Stream.ORACLE, 2, 0), draws, EPSILON)
    bound = exact_bound(example, one)
    target = -np.log(p)
    gap = abs(report.objective - target)
    results.append(create_check("bound", "N=1 mc", report.objective, gap,
                                gap <= 3 * report.std_error + 1e-12))
    results.append(create_check("bound", "N=1 exact", bound, abs(bound - target),
                                abs(bound - target) <= 1e-12))

    for j in range(n_predictors):
        rng = stream_rng(seed, Stream.ORACLE, 3, j)
        n = int(rng.integers(1, max_length + 1))
        predictor = TabularPredictor.random(n, 2, rng)
        truth = predictor.sequences[rng.choice(len(predictor.probs), p=predictor.probs)]
        example = response_example(truth, split=n // 2)
        report = mc_loss(example, predictor, rng, draws, EPSILON)
        truncated = exact_bound(example, predictor, epsilon=EPSILON)
        gap = abs(report.objective - truncated)
        results.append(create_check("bound", f"tabular#{j},N={n}", report.objective, gap,
                                    gap <= CI_Z * report.std_error + 1e-12))

        full = exact_bound(example, predictor)
        halved = exact_bound(example, predictor, epsilon=EPSILON / 2)
        bias, halved_bias = abs(truncated - full), abs(halved - full)
        ok = bias <= EPSILON_BIAS_LIMIT * max(1.0, full) and halved_bias <= HALVING_RATIO * bias + 1e-12
        results.append(create_check("bound", f"tabular#{j},epsilon-bias", halved_bias, bias, ok))
    return results


def check_reverse(seed: int, draws: int) -> list[CheckResult]:
    """Empirical sampler output law against the exact reverse enumeration (L=K=S=2)."""
    rng = stream_rng(seed, Stream.ORACLE, 4)
    predictor = TabularPredictor.random(2, 2, rng)
    cfg = SamplerConfig(gen_length=2, steps=2, strategy=RemaskStrategy.RANDOM, temperature=1.0)
    exact = enumerate_reverse(predictor, 2, 2, RemaskStrategy.RANDOM, 1.0)

    history = ConversationExample(turns=(Turn((0,)),))
    counts: dict = {}
    sample_rng = stream_rng(seed, Stream.ORACLE, 5)
    for _ in range(draws):
        tokens, _ = resolve(predictor, history, cfg, sample_rng)
        key = tuple(int(v) for v in tokens)
        counts[key] = counts.get(key, 0) + 1
    empirical = {k: v / draws for k, v in counts.items()}
    tv = total_variation(empirical, exact)
    return [create_check("reverse", "L=2,K=2,S=2,random", tv, tv, tv <= TV_LIMIT)]


def run_suite(suite: Suite, seed: int, draws: int) -> list[CheckResult]:
    logger.info("oracle check %s with %d draws", suite.value, draws)
    if suite is Suite.FORWARD:
        return check_forward(seed, draws)
    if suite is Suite.BOUND:
        return check_bound(seed, draws)
    return check_reverse(seed, draws)


def render_checks(results: list[CheckResult]) -> Table:
    table = Table(title="Oracle checks")
    for column in ("suite", "setting", "statistic", "max deviation", "verdict"):
        table.add_column(column)
    for r in results:
        verdict = "[green]pass[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.suite, r.setting, f"{r.statistic:.6g}", f"{r.max_deviation:.3g}", verdict)
    return table
