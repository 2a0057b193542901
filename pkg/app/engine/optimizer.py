"""Momentum SGD with per-group learning rates and gradient-norm clipping."""

from typing import Iterable, Mapping, Optional, Union

import numpy as np

from ..core.config import GroupRates
from ..core.errors import NumericError, ValidationError

Params = dict[str, np.ndarray]


def _rate(rates: Union[GroupRates, Mapping[str, float]], group: str) -> float:
    if isinstance(rates, GroupRates):
        return rates.get(group)
    return float(rates[group])


def _group(name: str) -> str:
    return name.split(".", 1)[0]


def global_norm(grads: Params, names: Iterable[str]) -> float:
    return float(np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names)))


def clip_grad_norm(grads: Params, max_norm: Optional[float], names: Iterable[str]) -> tuple[Params, float]:
    """Scale the listed gradients so their joint L2 norm is at most ``max_norm``."""
    names = list(names)
    norm = global_norm(grads, names)
    if not np.isfinite(norm):
        raise NumericError("gradient norm is not finite")
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    clipped = dict(grads)
    for n in names:
        clipped[n] = grads[n] * scale
    return clipped, norm


def sgd_step(
    params: Params,
    grads: Params,
    rates: Union[GroupRates, Mapping[str, float]],
    momentum: float,
    velocity: Optional[Params] = None,
    frozen: Iterable[str] = (),
) -> tuple[Params, Params]:
    """
    One classic momentum update: ``v = momentum * v + g; p = p - rate * v``.

    Parameters of a frozen group (or a group with rate 0) are returned
    untouched, as is their velocity. Returns (new_params, new_velocity).
    """
    frozen = set(frozen)
    velocity = {} if velocity is None else velocity
    new_params, new_velocity = {}, {}

    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            got = None if g is None else g.shape
            raise ValidationError(f"gradient for {name} has shape {got}, expected {p.shape}")

        group = _group(name)
        rate = _rate(rates, group)
        v = velocity.get(name)
        if group in frozen or rate == 0.0:
            new_params[name] = p
            if v is not None:
                new_velocity[name] = v
            continue

        v = g.copy() if v is None else momentum * v + g
        new_velocity[name] = v
        new_params[name] = p - rate * v
    return new_params, new_velocity
