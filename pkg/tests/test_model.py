import numpy as np
import pytest

from app.adapters.bundle import ObjectiveTerm, loss_gradients, masked_cross_entropy
from app.adapters.predictor import PredictorInput, predict
from app.core.config import ModelConfig
from app.core.conversation import AttentionMaskKind, ConversationExample, Role, Turn, corrupt_responses, layout
from app.core.errors import NumericError, ValidationError
from app.core.vocab import MASK_TOKEN
from conftest import bundle_for

GRAD_MODEL = ModelConfig(d_model=32, n_heads=2, n_blocks=1, d_ff=64, projector_hidden=16, max_len=32,
                         init_scale=0.3)


def objective_term(bundle, example, rng, t=0.6):
    lay = layout(example)
    corrupted = corrupt_responses(lay, t, rng)
    positions = lay.response_positions
    hit = corrupted.tokens[positions] == MASK_TOKEN
    hit[0] = True
    tokens = corrupted.tokens.copy()
    tokens[positions[0]] = MASK_TOKEN
    corrupted = corrupted.with_tokens(tokens)
    targets = np.full(lay.total_length, -1)
    targets[positions[hit]] = lay.tokens[positions[hit]]
    return ObjectiveTerm(bundle.input_for(corrupted, AttentionMaskKind.DIALOGUE_CAUSAL), targets, 1.0 / t)


class TestBundle:

    def test_initialization_is_seeded(self, caption_task):
        a, b = bundle_for(caption_task, seed=3), bundle_for(caption_task, seed=3)
        assert a.checksums() == b.checksums()
        assert bundle_for(caption_task, seed=4).checksum("language") != a.checksum("language")

    def test_vision_group_is_empty(self, tiny_bundle):
        assert tiny_bundle.group_names("vision") == []
        assert set(tiny_bundle.group_names("projector")) == {
            "projector.W1", "projector.b1", "projector.W2", "projector.b2"
        }

    def test_prediction_rows(self, tiny_bundle, image_example):
        lay = layout(image_example)
        grid = predict(tiny_bundle, tiny_bundle.input_for(lay, AttentionMaskKind.NO_MASK))
        assert grid.probs.shape == (lay.total_length, tiny_bundle.vocab.output_size)
        np.testing.assert_allclose(grid.probs.sum(axis=1), 1.0)

    def test_parameter_shapes_checked(self, tiny_bundle):
        params = dict(tiny_bundle.params)
        params["language.W_out"] = np.zeros((3, 3))
        with pytest.raises(ValidationError):
            tiny_bundle.with_params(params)

    def test_non_finite_parameters(self, tiny_bundle, image_example):
        params = dict(tiny_bundle.params)
        params["language.W_out"] = np.full_like(params["language.W_out"], np.nan)
        broken = tiny_bundle.with_params(params)
        with pytest.raises(NumericError):
            broken.predict(broken.input_for(layout(image_example), AttentionMaskKind.NO_MASK))

    def test_length_limit(self, caption_task):
        bundle = bundle_for(caption_task, ModelConfig(d_model=8, n_heads=2, n_blocks=1, d_ff=8,
                                                      projector_hidden=8, max_len=6))
        example = ConversationExample(turns=(Turn((9,), (1, 2, 3, 4, 5, 6)),))
        with pytest.raises(ValidationError):
            bundle.predict(bundle.input_for(layout(example), AttentionMaskKind.NO_MASK))


class TestAttentionFaithfulness:

    def predictions(self, bundle, example, kind):
        lay = layout(example)
        return bundle.predict(bundle.input_for(lay, kind)).probs

    def test_dialogue_causal_hides_later_turns(self, tiny_bundle, image_example):
        changed = ConversationExample(
            turns=(image_example.turns[0], Turn((11, 6), (1,))), image=image_example.image,
        )
        first_turn = layout(image_example).turns == 0
        a = self.predictions(tiny_bundle, image_example, AttentionMaskKind.DIALOGUE_CAUSAL)
        b = self.predictions(tiny_bundle, changed, AttentionMaskKind.DIALOGUE_CAUSAL)
        np.testing.assert_allclose(a[first_turn], b[first_turn], rtol=0, atol=1e-12)

        a = self.predictions(tiny_bundle, image_example, AttentionMaskKind.NO_MASK)
        b = self.predictions(tiny_bundle, changed, AttentionMaskKind.NO_MASK)
        assert np.abs(a[first_turn] - b[first_turn]).max() > 0

    def test_causal_hides_the_future(self, tiny_bundle, image_example):
        changed = ConversationExample(
            turns=(image_example.turns[0], Turn((11, 5), (0,))), image=image_example.image,
        )
        a = self.predictions(tiny_bundle, image_example, AttentionMaskKind.CAUSAL)
        b = self.predictions(tiny_bundle, changed, AttentionMaskKind.CAUSAL)
        np.testing.assert_allclose(a[:-1], b[:-1], rtol=0, atol=1e-12)


def test_masked_cross_entropy():
    logits = np.log(np.array([[0.25, 0.75], [0.5, 0.5]]))
    loss, dlogits = masked_cross_entropy(logits, np.array([1, -1]), weight=2.0)
    np.testing.assert_allclose(loss, -2.0 * np.log(0.75))
    np.testing.assert_allclose(dlogits, [[0.5, -0.5], [0.0, 0.0]])


def test_gradients_match_finite_differences(caption_task, image_example, rng):
    bundle = bundle_for(caption_task, GRAD_MODEL, seed=7)
    term = objective_term(bundle, image_example, rng)
    _, grads = loss_gradients(bundle, [term])

    def loss(params):
        _, cache = bundle.forward_with_params(term.input, params)
        return masked_cross_entropy(cache.logits, term.targets, term.weight)[0]

    names = sorted(bundle.params)
    sizes = np.array([bundle.params[n].size for n in names])
    coords = []
    for _ in range(200):
        flat = int(rng.integers(sizes.sum()))
        which = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        coords.append((names[which], int(rng.integers(sizes[which]))))
    projector = [n for n in names if n.startswith("projector.")]
    for _ in range(40):
        name = projector[int(rng.integers(len(projector)))]
        coords.append((name, int(rng.integers(bundle.params[name].size))))

    h = 1e-5
    worst = 0.0
    for name, index in coords:
        plus = dict(bundle.params)
        minus = dict(bundle.params)
        plus[name] = bundle.params[name].copy()
        minus[name] = bundle.params[name].copy()
        plus[name].flat[index] += h
        minus[name].flat[index] -= h
        numeric = (loss(plus) - loss(minus)) / (2 * h)
        analytic = grads[name].flat[index]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4))
    assert worst <= 1e-4


def test_terms_without_targets_are_skipped(tiny_bundle, image_example):
    lay = layout(image_example)
    term = ObjectiveTerm(tiny_bundle.input_for(lay, AttentionMaskKind.NO_MASK), np.full(lay.total_length, -1))
    loss, grads = loss_gradients(tiny_bundle, [term])
    assert loss == 0.0
    assert all(not g.any() for g in grads.values())


def text_input(tokens, attention=None, order=None):
    tokens = np.asarray(tokens)
    n = tokens.size
    roles = np.array([Role.PROMPT] + [Role.RESPONSE] * (n - 1))
    order = np.arange(n) if order is None else np.asarray(order)
    attention = np.ones((n, n), dtype=bool) if attention is None else attention
    return PredictorInput(tokens[order], roles[order], np.zeros(n, dtype=np.int64), attention,
                          positions=order)


class TestForwardInvariants:

    def test_private_key_changes_only_its_own_row(self, tiny_bundle):
        attention = np.ones((5, 5), dtype=bool)
        attention[:, 2] = False
        attention[2, 2] = True
        a = tiny_bundle.predict(text_input([9, 1, 4, MASK_TOKEN, 6], attention)).probs
        b = tiny_bundle.predict(text_input([9, 1, 7, MASK_TOKEN, 6], attention)).probs
        others = np.arange(5) != 2
        np.testing.assert_allclose(a[others], b[others], rtol=0, atol=1e-12)
        assert np.abs(a[2] - b[2]).max() > 0

    def test_permutation_equivariance_without_mask(self, tiny_bundle):
        tokens = [9, 1, MASK_TOKEN, 4, MASK_TOKEN, 6]
        order = [3, 0, 5, 1, 4, 2]
        base = tiny_bundle.predict(text_input(tokens)).probs
        permuted = tiny_bundle.predict(text_input(tokens, order=order)).probs
        np.testing.assert_allclose(permuted, base[order], rtol=0, atol=1e-10)

    def test_duplicated_example_doubles_the_gradient(self, caption_task, image_example, rng):
        bundle = bundle_for(caption_task, GRAD_MODEL, seed=2)
        term = objective_term(bundle, image_example, rng)
        loss, single = loss_gradients(bundle, [term])
        loss2, double = loss_gradients(bundle, [term, term])
        assert loss2 == 2 * loss
        for name, grad in single.items():
            np.testing.assert_array_equal(double[name], 2 * grad)
