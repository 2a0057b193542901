"""Tiny bidirectional transformer with explicit forward caches and manual backprop."""

from typing import Optional

import numpy as np

from ..core.config import ModelConfig
from ..core.conversation import Role
from ..core.errors import NumericError, ValidationError
from ..core.vocab import MASK_TOKEN
from .predictor import PredictorInput
from .vision import gelu, gelu_backward

_LN_EPS = 1e-5


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = (inv / d) * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


class TinyTransformer:
    """
    Post-LN bidirectional encoder over a flattened dialogue layout.

    Parameters live in a flat dict with per-block stacked arrays
    (``Wq[l]`` is block l). The model object itself holds only shapes, so
    forward and backward are safe to run concurrently on one parameter set.
    """

    def __init__(self, cfg: ModelConfig, embedding_size: int, output_size: int, mask_id: int):
        if cfg.d_model % cfg.n_heads:
            raise ValidationError("d_model must be divisible by n_heads")
        self.cfg = cfg
        self.embedding_size = embedding_size
        self.output_size = output_size
        self.mask_id = mask_id
        self.head_dim = cfg.d_model // cfg.n_heads

    def shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.cfg
        d, b = c.d_model, c.n_blocks
        return {
            "tok_emb": (self.embedding_size, d),
            "pos_emb": (c.max_len, d),
            "role_emb": (len(Role), d),
            "Wq": (b, d, d),
            "Wk": (b, d, d),
            "Wv": (b, d, d),
            "Wo": (b, d, d),
            "ln1_g": (b, d),
            "ln1_b": (b, d),
            "W1": (b, d, c.d_ff),
            "b1": (b, c.d_ff),
            "W2": (b, c.d_ff, d),
            "b2": (b, d),
            "ln2_g": (b, d),
            "ln2_b": (b, d),
            "W_out": (d, self.output_size),
            "b_out": (self.output_size,),
        }

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        scale = self.cfg.init_scale
        params = {}
        for name, shape in self.shapes().items():
            if name.endswith("_g"):
                params[name] = np.ones(shape)
            elif name.endswith("_b") or name in ("b1", "b2", "b_out"):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.uniform(-scale, scale, size=shape)
        return params

    # -- forward ----------------------------------------------------------

    def embed(self, params, inp: PredictorInput, image_embeddings: Optional[np.ndarray]):
        n = inp.length
        if n > self.cfg.max_len:
            raise ValidationError(f"layout of length {n} exceeds max_len {self.cfg.max_len}")
        if inp.positions.size and (inp.positions.min() < 0 or inp.positions.max() >= self.cfg.max_len):
            raise ValidationError("positional indices out of range")

        is_image = inp.roles == Role.IMAGE
        ids = np.where(inp.tokens == MASK_TOKEN, self.mask_id, inp.tokens)
        ids = np.where(is_image, 0, ids)
        text_ids = ids[~is_image]
        if text_ids.size and (text_ids.min() < 0 or text_ids.max() >= self.embedding_size):
            raise ValidationError(f"token ids must lie in [0, {self.embedding_size})")

        x = params["tok_emb"][ids]
        if is_image.any():
            if image_embeddings is None:
                raise ValidationError("IMAGE positions need projected image embeddings")
            x = np.where(is_image[:, None], image_embeddings[inp.tokens * is_image], x)
        x = x + params["pos_emb"][inp.positions] + params["role_emb"][inp.roles]
        return x, ids, is_image

    def _attention(self, params, l: int, x: np.ndarray, allowed: np.ndarray):
        n, d = x.shape
        h, dh = self.cfg.n_heads, self.head_dim

        def heads(m):
            return m.reshape(n, h, dh).transpose(1, 0, 2)

        q, k, v = heads(x @ params["Wq"][l]), heads(x @ params["Wk"][l]), heads(x @ params["Wv"][l])
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
        weights = softmax(np.where(allowed[None], scores, -np.inf))
        mixed = (weights @ v).transpose(1, 0, 2).reshape(n, d)
        out = mixed @ params["Wo"][l]
        return out, (x, q, k, v, weights, mixed)

    def forward(self, params, inp: PredictorInput, image_embeddings: Optional[np.ndarray] = None):
        """Return (logits, cache) for one layout."""
        x, ids, is_image = self.embed(params, inp, image_embeddings)
        _check_finite(x, "input embeddings")

        blocks = []
        for l in range(self.cfg.n_blocks):
            a, attn_cache = self._attention(params, l, x, inp.attention)
            y1, ln1 = layer_norm(x + a, params["ln1_g"][l], params["ln1_b"][l])
            z = y1 @ params["W1"][l] + params["b1"][l]
            hidden, th = gelu(z)
            f = hidden @ params["W2"][l] + params["b2"][l]
            x, ln2 = layer_norm(y1 + f, params["ln2_g"][l], params["ln2_b"][l])
            _check_finite(x, f"block {l} activations")
            blocks.append((attn_cache, ln1, y1, z, th, hidden, ln2))

        logits = x @ params["W_out"] + params["b_out"]
        _check_finite(logits, "logits")
        n_features = 0 if image_embeddings is None else image_embeddings.shape[0]
        cache = {"ids": ids, "is_image": is_image, "inp": inp, "final": x, "blocks": blocks,
                 "n_features": n_features}
        return logits, cache

    # -- backward ---------------------------------------------------------

    def _attention_backward(self, params, l: int, cache, dout: np.ndarray, grads):
        x, q, k, v, weights, mixed = cache
        n, d = x.shape
        h, dh = self.cfg.n_heads, self.head_dim

        grads["Wo"][l] += mixed.T @ dout
        dmixed = (dout @ params["Wo"][l].T).reshape(n, h, dh).transpose(1, 0, 2)
        dweights = dmixed @ v.transpose(0, 2, 1)
        dv = weights.transpose(0, 2, 1) @ dmixed
        # blocked pairs carry zero weight, hence zero score gradient
        dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
        scale = 1.0 / np.sqrt(dh)
        dq = scale * (dscores @ k)
        dk = scale * (dscores.transpose(0, 2, 1) @ q)

        def merge(m):
            return m.transpose(1, 0, 2).reshape(n, d)

        dq, dk, dv = merge(dq), merge(dk), merge(dv)
        grads["Wq"][l] += x.T @ dq
        grads["Wk"][l] += x.T @ dk
        grads["Wv"][l] += x.T @ dv
        return dq @ params["Wq"][l].T + dk @ params["Wk"][l].T + dv @ params["Wv"][l].T

    def backward(self, params, cache, dlogits: np.ndarray):
        """
        Gradients of a scalar loss given dL/dlogits.

        Returns (grads, d_image_embeddings); the second item is None when
        the layout has no IMAGE positions.
        """
        grads = {name: np.zeros_like(p) for name, p in params.items()}
        grads["W_out"] += cache["final"].T @ dlogits
        grads["b_out"] += dlogits.sum(axis=0)
        dx = dlogits @ params["W_out"].T

        for l in reversed(range(self.cfg.n_blocks)):
            attn_cache, ln1, y1, z, th, hidden, ln2 = cache["blocks"][l]
            dr2, grads["ln2_g"][l], grads["ln2_b"][l] = layer_norm_backward(dx, ln2)
            grads["W2"][l] += hidden.T @ dr2
            grads["b2"][l] += dr2.sum(axis=0)
            dz = gelu_backward(dr2 @ params["W2"][l].T, z, th)
            grads["W1"][l] += y1.T @ dz
            grads["b1"][l] += dz.sum(axis=0)
            dy1 = dr2 + dz @ params["W1"][l].T

            dr1, grads["ln1_g"][l], grads["ln1_b"][l] = layer_norm_backward(dy1, ln1)
            dx = dr1 + self._attention_backward(params, l, attn_cache, dr1, grads)

        inp = cache["inp"]
        is_image = cache["is_image"]
        np.add.at(grads["pos_emb"], inp.positions, dx)
        np.add.at(grads["role_emb"], inp.roles.astype(np.int64), dx)
        np.add.at(grads["tok_emb"], cache["ids"][~is_image], dx[~is_image])

        dimage = None
        if is_image.any():
            dimage = np.zeros((cache["n_features"], dx.shape[1]))
            np.add.at(dimage, inp.tokens[is_image], dx[is_image])
        _check_finite(dx, "embedding gradients")
        return grads, dimage
