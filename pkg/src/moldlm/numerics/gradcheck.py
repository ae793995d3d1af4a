"""Finite-difference verification of the autodiff engine."""

from __future__ import annotations

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, backward, no_grad

__all__ = ["grad_check"]


def grad_check(model_fn, store: ParameterStore, eps: float = 1e-5,
               n_samples: int = 200, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central differences.

    ``model_fn`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from the store's parameters. Returns the max over
    sampled coordinates of |analytic - cd| / max(|analytic|, |cd|, 1e-12).
    Frozen parameters are excluded. Meaningful only in double precision.
    """
    with no_grad():
        a = float(model_fn().data)
        b = float(model_fn().data)
    if a != b:
        raise ValueError(f"model_fn is not deterministic ({a!r} != {b!r})")

    store.zero_grad()
    loss = model_fn()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("model_fn must return a scalar Tensor")
    backward(loss)

    coords: list[tuple[str, int]] = []
    for name, p in store.items():
        if store.is_frozen(name):
            continue
        coords.extend((name, i) for i in range(p.size))
    if not coords:
        raise ValueError("store has no trainable parameters")
    if rng is None:
        rng = np.random.default_rng(0)
    if len(coords) > n_samples:
        picks = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in picks]

    worst = 0.0
    for name, i in coords:
        p = store[name]
        analytic = float(p.grad.flat[i]) if p.grad is not None else 0.0
        orig = p.data.flat[i]
        with no_grad():
            p.data.flat[i] = orig + eps
            f_plus = float(model_fn().data)
            p.data.flat[i] = orig - eps
            f_minus = float(model_fn().data)
        p.data.flat[i] = orig
        cd = (f_plus - f_minus) / (2.0 * eps)
        rel = abs(analytic - cd) / max(abs(analytic), abs(cd), 1e-12)
        worst = max(worst, rel)
    return worst
