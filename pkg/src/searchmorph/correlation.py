"""All-pairs cost volume, its pooled pyramid, and the diamond search lookup."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import functional as F
from .tensor import Tensor, concat, matmul

NUM_LEVELS = 4


@dataclass
class CostVolume:
    """Inner products between every moving and every fixed feature location.

    ``values`` is (N, H, W, H, W), or (H, W, H, W) for unbatched input; the
    first spatial pair indexes the query map, the second the searched map.
    """

    values: Tensor

    @property
    def batched(self):
        return self.values.ndim == 5

    @property
    def matrix(self):
        """(N, H*W, H*W) view."""
        v = self.values if self.batched else self.values.reshape(1, *self.values.shape)
        n, h, w = v.shape[:3]
        return v.reshape(n, h * w, h * w)


@dataclass
class CorrelationPyramid:
    """Cost volume plus copies with the searched axes average-pooled by 2, 4, 8."""

    levels: list

    @property
    def batched(self):
        return self.levels[0].ndim == 5


def compute_cost_volume(hM, hF, normalize=False):
    """C[i, j, k, l] = sum_d hM[d, i, j] * hF[d, k, l].

    Inputs are (D, H, W) or (N, D, H, W). With ``normalize`` the products are
    divided by sqrt(D).
    """
    if hM.shape != hF.shape:
        raise ValueError(f"feature maps differ in shape: {hM.shape} vs {hF.shape}")
    unbatched = hM.ndim == 3
    if unbatched:
        hM = hM.reshape(1, *hM.shape)
        hF = hF.reshape(1, *hF.shape)
    n, d, h, w = hM.shape
    a = hM.reshape(n, d, h * w).transpose(0, 2, 1)
    b = hF.reshape(n, d, h * w)
    c = matmul(a, b)
    if normalize:
        c = c * (1.0 / np.sqrt(d))
    shape = (h, w, h, w) if unbatched else (n, h, w, h, w)
    return CostVolume(c.reshape(shape))


def build_pyramid(cv, levels=NUM_LEVELS):
    """Pool the last two axes of the cost volume with windows 1, 2, 4, 8."""
    base = cv.values
    h, w = base.shape[-2:]
    out = [base]
    for lvl in range(1, levels):
        k = 2 ** lvl
        if h % k == 0 and w % k == 0:
            # equal-size blocks: pooling the previous level by 2 is the same mean
            out.append(F.avg_pool2d(out[-1], 2))
        else:
            out.append(F.avg_pool2d(base, k))
    return CorrelationPyramid(out)


@lru_cache(maxsize=None)
def _diamond(radius):
    return tuple(
        (dx, dy)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if abs(dx) + abs(dy) <= radius
    )


class SearchNeighborhood:
    """Integer offsets (dx, dy) with |dx| + |dy| <= radius, ordered by (dy, dx)."""

    def __init__(self, radius):
        if radius < 1:
            raise ValueError(f"search radius must be >= 1, got {radius}")
        self.radius = int(radius)
        self.offsets = list(_diamond(self.radius))

    def __len__(self):
        return len(self.offsets)

    def as_array(self, dtype=np.float32):
        return np.array(self.offsets, dtype=dtype).T  # (2, K)


def search_channels(radius, levels=NUM_LEVELS):
    return levels * (2 * radius * radius + 2 * radius + 1)


def search_lookup(pyr, flow, radius):
    """Sample every pyramid level on a diamond around each warped pixel.

    ``flow`` is the half-resolution displacement (N, 2, H, W) or (2, H, W),
    channel 0 along x (columns) and 1 along y (rows). The warped position
    p + flow(p) is scaled by 2**-level and the offsets are added at that
    scale, so the same radius covers a wider area on coarser levels.

    Returns the search map (N, levels*K, H, W), level-major, offsets in
    :class:`SearchNeighborhood` order.
    """
    nb = SearchNeighborhood(radius)
    if hasattr(flow, "flow"):
        flow = flow.flow
    unbatched = flow.ndim == 3
    if unbatched:
        flow = flow.reshape(1, *flow.shape)
    n, _, h, w = flow.shape
    levels = pyr.levels if pyr.batched else [c.reshape(1, *c.shape) for c in pyr.levels]
    if levels[0].shape[1:3] != (h, w):
        raise ValueError(
            f"field size {h}x{w} does not match cost volume size {levels[0].shape[1:3]}"
        )
    k = len(nb)
    dtype = levels[0].dtype
    grid = F.identity_grid(h, w, dtype)
    offsets = Tensor(nb.as_array(dtype).reshape(1, 2, 1, k), dtype=dtype)
    warped = (flow + Tensor(grid, dtype=dtype)).transpose(0, 2, 3, 1).reshape(n * h * w, 2, 1, 1)
    out = []
    for lvl, corr in enumerate(levels):
        hl, wl = corr.shape[-2:]
        coords = warped * (1.0 / 2 ** lvl) + offsets
        samples = F.grid_sample(corr.reshape(n * h * w, 1, hl, wl), coords)
        out.append(samples.reshape(n, h, w, k))
    smap = concat(out, axis=3).transpose(0, 3, 1, 2)
    return smap.reshape(smap.shape[1:]) if unbatched else smap
