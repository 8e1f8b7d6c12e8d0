"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, names=None):
    """Update ``params`` in place from their ``grad`` and clear the grads.

    ``names`` keys the moment buffers (defaults to list position). A tensor
    whose gradient is exactly zero everywhere is left alone, moments included.
    """
    names = list(range(len(params))) if names is None else list(names)
    for name, p in zip(names, params):
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward() first")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, p in zip(names, params):
        g = p.grad
        p.grad = None
        if not np.any(g):
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)
