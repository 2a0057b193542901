import numpy as np
import pytest

from app.core.config import GroupRates
from app.core.errors import NumericError, ValidationError
from app.engine.optimizer import clip_grad_norm, sgd_step


def make_params():
    return {"language.W": np.ones((2, 2)), "projector.W": np.ones(3)}


def make_grads():
    return {"language.W": np.full((2, 2), 0.5), "projector.W": np.full(3, 2.0)}


class TestSgdStep:

    def test_momentum_update(self):
        rates = GroupRates(language=0.1, projector=0.2)
        params, velocity = sgd_step(make_params(), make_grads(), rates, momentum=0.9)
        np.testing.assert_allclose(params["language.W"], 1.0 - 0.1 * 0.5)
        np.testing.assert_allclose(params["projector.W"], 1.0 - 0.2 * 2.0)

        params, velocity = sgd_step(params, make_grads(), rates, 0.9, velocity)
        np.testing.assert_allclose(velocity["language.W"], 0.9 * 0.5 + 0.5)
        np.testing.assert_allclose(params["language.W"], 0.95 - 0.1 * 0.95)

    def test_frozen_group_is_untouched(self):
        params = make_params()
        new, velocity = sgd_step(params, make_grads(), GroupRates(), 0.9, frozen={"language"})
        assert new["language.W"] is params["language.W"]
        assert "language.W" not in velocity
        assert not np.array_equal(new["projector.W"], params["projector.W"])

    def test_zero_rate_is_untouched(self):
        params = make_params()
        new, _ = sgd_step(params, make_grads(), {"language": 0.0, "projector": 0.1}, 0.9)
        assert new["language.W"] is params["language.W"]

    def test_shape_mismatch(self):
        grads = make_grads()
        grads["projector.W"] = np.zeros(4)
        with pytest.raises(ValidationError):
            sgd_step(make_params(), grads, GroupRates(), 0.9)


class TestClipping:

    def test_scales_to_max_norm(self):
        grads = {"a": np.array([3.0, 4.0]), "b": np.array([10.0])}
        clipped, norm = clip_grad_norm(grads, 1.0, ["a"])
        assert norm == 5.0
        np.testing.assert_allclose(clipped["a"], [0.6, 0.8])
        np.testing.assert_array_equal(clipped["b"], [10.0])

    def test_disabled(self):
        grads = {"a": np.array([3.0, 4.0])}
        clipped, _ = clip_grad_norm(grads, None, ["a"])
        assert clipped is grads

    def test_non_finite(self):
        with pytest.raises(NumericError):
            clip_grad_norm({"a": np.array([np.inf])}, 1.0, ["a"])
