"""Recurrent refinement of the half-resolution deformation field."""
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .correlation import search_channels, search_lookup
from .tensor import Tensor, concat

HALF = "half"
FULL = "full"


@dataclass
class DeformationField:
    """Per-pixel displacement in pixels; ``flow`` channel 0 is x, channel 1 is y.

    ``flow`` is (N, 2, H, W) or unbatched (2, H, W).
    """

    flow: Tensor
    resolution: str = FULL

    @property
    def batched(self):
        return self.flow.ndim == 4

    @property
    def fx(self):
        return self.flow[:, 0] if self.batched else self.flow[0]

    @property
    def fy(self):
        return self.flow[:, 1] if self.batched else self.flow[1]

    @property
    def shape(self):
        return self.flow.shape[-2:]

    def numpy(self):
        return self.flow.data

    @classmethod
    def zeros(cls, n, h, w, resolution=HALF, dtype=np.float32):
        return cls(Tensor(np.zeros((n, 2, h, w)), dtype=dtype), resolution)


@dataclass
class IteratorState:
    field: DeformationField
    hidden: Tensor
    step: int = 0


def finalize(field):
    """Bilinear 2x upsampling; values doubled to stay in full-resolution pixels."""
    if field.resolution != HALF:
        raise ValueError("finalize expects a half-resolution field")
    return DeformationField(F.upsample2x_bilinear(field.flow) * 2.0, FULL)


def iterate(fm, pyr, cfg, gru, head, hook=None):
    """Run ``cfg.num_iters`` search -> GRU -> update steps from a zero field.

    Returns the finalized full-resolution field and the half-resolution field
    after every step. ``hook``, when given, is called with each search map.
    """
    if cfg.num_iters < 1 or cfg.radius < 1:
        raise ValueError("num_iters and radius must both be >= 1")
    context = fm.context
    unbatched = context.ndim == 3
    if unbatched:
        context = context.reshape(1, *context.shape)
    n, _, h, w = context.shape
    dtype = context.dtype
    n_search = search_channels(cfg.radius)
    n_dyn = n_search + (2 if cfg.field_input else 0)
    if gru.input_dim != n_dyn + context.shape[1]:
        raise ValueError(
            f"GRU expects {gru.input_dim} input channels, iterator supplies "
            f"{n_dyn + context.shape[1]}"
        )
    # the context part of the GRU input never changes: project it once
    static = gru.project_input(context, slice(n_dyn, None))
    state = IteratorState(
        DeformationField.zeros(n, h, w, HALF, dtype),
        Tensor(np.zeros((n, gru.hidden_dim, h, w)), dtype=dtype),
    )
    steps = []
    for _ in range(cfg.num_iters):
        smap = search_lookup(pyr, state.field.flow, cfg.radius)
        if hook is not None:
            hook(smap)
        dyn = concat([smap, state.field.flow], axis=1) if cfg.field_input else smap
        xproj = gru.project_input(dyn, slice(0, n_dyn)) + static
        state.hidden = gru.step(xproj, state.hidden)
        delta = head(state.hidden)
        state.field = DeformationField(state.field.flow + delta, HALF)
        state.step += 1
        steps.append(state.field)
    final = finalize(state.field)
    if unbatched:
        final = DeformationField(final.flow.reshape(final.flow.shape[1:]), FULL)
        steps = [DeformationField(s.flow.reshape(s.flow.shape[1:]), HALF) for s in steps]
    return final, steps
