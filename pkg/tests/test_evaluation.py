import numpy as np
import pytest

from app.core.config import EvalConfig, SamplerConfig
from app.core.diffusion import RemaskStrategy
from app.core.errors import ValidationError
from app.harness.evaluation import evaluate, open_history
from app.harness.tasks import GridCaptionTask, Split, TruthPredictor, make_corpus
from conftest import bundle_for


@pytest.mark.parametrize("family", ["caption", "count"])
def test_truth_predictor_is_perfect(family):
    task = GridCaptionTask(2, 2, 2, 2, family=family)
    corpus = make_corpus(task, 20, seed=0, split=Split.EVAL)
    truth = TruthPredictor.from_corpus(corpus, task.vocab.output_size)
    report = evaluate(truth, corpus, SamplerConfig(steps=4), EvalConfig(loss_draws=3))
    assert report.exact_match == 1.0
    assert report.token_accuracy == 1.0
    assert report.mean_bound == pytest.approx(0.0, abs=1e-12)
    assert report.n_examples == 20


def test_open_history(image_example):
    history, truth = open_history(image_example)
    assert history.awaiting_response
    assert history.turns[0] == image_example.turns[0]
    np.testing.assert_array_equal(truth, [3])


def test_empty_corpus(tiny_bundle):
    with pytest.raises(ValidationError):
        evaluate(tiny_bundle, [], SamplerConfig())


def test_limit(caption_task, caption_corpus):
    truth = TruthPredictor.from_corpus(caption_corpus, caption_task.vocab.output_size)
    report = evaluate(truth, caption_corpus, SamplerConfig(steps=2), EvalConfig(limit=5))
    assert report.n_examples == 5


def test_untrained_model_is_at_chance(caption_task):
    corpus = make_corpus(caption_task, 420, seed=0, split=Split.EVAL)
    sampler = SamplerConfig(steps=3, strategy=RemaskStrategy.RANDOM, temperature=1.0)
    report = evaluate(bundle_for(caption_task), corpus, sampler)
    n_tokens = len(corpus) * caption_task.caption_length
    chance = 1.0 / caption_task.vocab.output_size
    sigma = np.sqrt(chance * (1 - chance) / n_tokens)
    assert abs(report.token_accuracy - chance) <= 4 * sigma + 0.01
    assert report.exact_match <= report.token_accuracy
