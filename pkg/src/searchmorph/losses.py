"""Spatial transformer warp and the training objective."""
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .config import ALPHA_DEFAULTS
from .iterator import FULL, DeformationField
from .tensor import Tensor, mean, sqrt

LNCC_EPS = 1e-5


@dataclass
class LossConfig:
    similarity: str = "mse"
    alpha: float = None
    lncc_window: int = 9
    lncc_signed: bool = False

    def __post_init__(self):
        if self.similarity not in ALPHA_DEFAULTS:
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.alpha is None:
            self.alpha = ALPHA_DEFAULTS[self.similarity]
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.lncc_window < 3 or self.lncc_window % 2 == 0:
            raise ValueError("lncc_window must be odd and >= 3")

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.similarity, cfg.alpha, cfg.lncc_window, cfg.lncc_signed)


def _flow(field):
    return field.flow if isinstance(field, DeformationField) else field


def warp(image, field):
    """Resample ``image`` at p + field(p) with bilinear weights, border-clamped."""
    if isinstance(field, DeformationField) and field.resolution != FULL:
        raise ValueError("warp needs a full-resolution field")
    flow = _flow(field)
    if image.shape[-2:] != flow.shape[-2:]:
        raise ValueError(f"image {image.shape} and field {flow.shape} sizes differ")
    grid = Tensor(F.identity_grid(*flow.shape[-2:], image.dtype), dtype=image.dtype)
    return F.grid_sample(image, flow + grid)


def mse_loss(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mse_loss: shapes differ {a.shape} vs {b.shape}")
    diff = a - b
    return mean(diff * diff)


def lncc_loss(a, b, window=9, signed=False, eps=LNCC_EPS):
    """1 - mean local correlation over ``window`` x ``window`` neighbourhoods.

    The squared coefficient is used unless ``signed``.
    """
    if window % 2 == 0:
        raise ValueError("lncc window must be odd")
    if a.shape != b.shape:
        raise ValueError(f"lncc_loss: shapes differ {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.reshape(1, *a.shape)
        b = b.reshape(1, *b.shape)
    # windows are clipped at the border; each statistic uses only in-image
    # pixels so an affine intensity change leaves the loss unchanged there too
    inv_n = Tensor(1.0 / F._box_sum(np.ones(a.shape[-2:]), window), dtype=a.dtype)
    a_sum = F.box_filter(a, window)
    b_sum = F.box_filter(b, window)
    a2 = F.box_filter(a * a, window)
    b2 = F.box_filter(b * b, window)
    ab = F.box_filter(a * b, window)
    cross = ab - a_sum * b_sum * inv_n
    a_var = a2 - a_sum * a_sum * inv_n
    b_var = b2 - b_sum * b_sum * inv_n
    if signed:
        cc = cross / sqrt(a_var * b_var + eps)
    else:
        cc = cross * cross / (a_var * b_var + eps)
    return 1.0 - mean(cc)


def smoothness_loss(field):
    """Mean over pixels of the squared forward differences, summed over both
    components and both directions."""
    flow = _flow(field)
    dx = flow[..., :, 1:] - flow[..., :, :-1]
    dy = flow[..., 1:, :] - flow[..., :-1, :]
    comps = 2.0
    return (mean(dx * dx) + mean(dy * dy)) * comps


def similarity_loss(warped, fixed, cfg):
    if cfg.similarity == "mse":
        return mse_loss(warped, fixed)
    return lncc_loss(warped, fixed, cfg.lncc_window, cfg.lncc_signed)


def total_loss(moving, fixed, field, cfg):
    """Similarity of the warped moving image to the fixed one plus alpha * smoothness."""
    warped = warp(moving, field)
    return similarity_loss(warped, fixed, cfg) + smoothness_loss(field) * cfg.alpha


def warp_labels(labels, flow):
    """Nearest-neighbour warp of an integer label map (numpy, no gradient)."""
    labels = np.asarray(labels)
    flow = getattr(flow, "flow", flow)
    flow = np.asarray(getattr(flow, "data", flow))
    H, W = labels.shape[-2:]
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    x = np.clip(np.rint(xs + flow[..., 0, :, :]), 0, W - 1).astype(np.int64)
    y = np.clip(np.rint(ys + flow[..., 1, :, :]), 0, H - 1).astype(np.int64)
    if labels.ndim == 2:
        return labels[y, x]
    idx = np.arange(labels.shape[0])[:, None, None]
    return labels[idx, y, x]
