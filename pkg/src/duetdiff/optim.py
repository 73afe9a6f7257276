"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    """First/second-moment accumulators keyed by parameter name."""

    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr):
    """Apply one AdamW update in place.

    ``params`` maps names to Tensors, ``grads`` maps the same names to
    arrays. The step counter is incremented before bias correction. A
    non-finite gradient rejects the whole step and leaves parameters and
    optimizer state untouched.
    """
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"adamw_step: non-finite gradient for parameter {name!r}")

    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / c1
        vhat = v / c2
        p.data -= lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * p.data)


def clip_grad_norm(grads, max_norm=1.0):
    """Scale gradients so their global L2 norm is at most ``max_norm``.

    Returns (scaled grads, pre-clip norm). Gradients at or below the
    threshold pass through unchanged.
    """
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm
