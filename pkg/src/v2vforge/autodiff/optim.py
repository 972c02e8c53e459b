"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptState:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptState):
    """One AdamW update over the parameters named in ``grads``.

    Parameters absent from ``grads`` are left untouched (frozen). Returns a new
    parameter dict; the input arrays are not modified.
    """
    b1, b2 = state.betas
    step = state.step + 1
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    new_params = dict(params)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p_new = p - state.lr * update
        if state.weight_decay:
            p_new = p_new - state.lr * state.weight_decay * p
        new_params[name] = p_new.astype(p.dtype, copy=False)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
    state.step = step
    return new_params, state
