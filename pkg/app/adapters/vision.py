"""Deterministic grid featurizer and the two-layer projector into the embedding space."""

from dataclasses import dataclass

import numpy as np

from ..core.conversation import SyntheticImage
from ..core.errors import ValidationError

_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-approximated GELU; returns the output and the tanh term for backward."""
    th = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + th), th


def gelu_backward(dy: np.ndarray, x: np.ndarray, th: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du)


@dataclass(frozen=True)
class VisionStub:
    """
    Parameterless featurizer for grids of at most ``height`` x ``width`` cells.

    Each cell becomes one feature vector: a one-hot of its cell id followed
    by one-hots of its row and column. Features are read in row-major order.
    """
    n_cell_ids: int
    height: int
    width: int

    @property
    def feature_dim(self) -> int:
        return self.n_cell_ids + self.height + self.width

    def encode_image(self, image: SyntheticImage) -> np.ndarray:
        grid = image.to_array()
        h, w = grid.shape
        if h > self.height or w > self.width:
            raise ValidationError(f"grid {h}x{w} exceeds featurizer bounds {self.height}x{self.width}")
        if grid.size and (grid.min() < 0 or grid.max() >= self.n_cell_ids):
            raise ValidationError(f"grid cell ids must lie in [0, {self.n_cell_ids})")

        rows, cols = np.divmod(np.arange(h * w), w)
        features = np.zeros((h * w, self.feature_dim), dtype=np.float64)
        features[np.arange(h * w), grid.reshape(-1)] = 1.0
        features[np.arange(h * w), self.n_cell_ids + rows] = 1.0
        features[np.arange(h * w), self.n_cell_ids + self.height + cols] = 1.0
        return features


PROJECTOR_PARAMS = ("W1", "b1", "W2", "b2")


class Projector:
    """Two-layer MLP ``d_v -> hidden -> d_model`` with GELU in between."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "W1": (self.in_dim, self.hidden),
            "b1": (self.hidden,),
            "W2": (self.hidden, self.out_dim),
            "b2": (self.out_dim,),
        }

    def init_params(self, rng: np.random.Generator, scale: float) -> dict[str, np.ndarray]:
        params = {}
        for name, shape in self.shapes().items():
            if name.startswith("b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.uniform(-scale, scale, size=shape)
        return params

    def project(self, params: dict[str, np.ndarray], features: np.ndarray):
        """Map F x d_v features to F x d_model embeddings; returns (out, cache)."""
        z = features @ params["W1"] + params["b1"]
        h, th = gelu(z)
        out = h @ params["W2"] + params["b2"]
        return out, (features, z, th, h)

    def backward(self, params: dict[str, np.ndarray], cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        features, z, th, h = cache
        dh = dout @ params["W2"].T
        dz = gelu_backward(dh, z, th)
        return {
            "W1": features.T @ dz,
            "b1": dz.sum(axis=0),
            "W2": h.T @ dout,
            "b2": dout.sum(axis=0),
        }


def encode_image(stub: VisionStub, image: SyntheticImage) -> np.ndarray:
    return stub.encode_image(image)


def project(projector: Projector, params: dict[str, np.ndarray], features: np.ndarray) -> np.ndarray:
    return projector.project(params, features)[0]
