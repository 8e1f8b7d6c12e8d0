"""Evaluation metrics: Dice overlap, folding ratio, endpoint error, timing."""
import time

import numpy as np


def _flow_array(field):
    flow = getattr(field, "flow", field)
    return np.asarray(getattr(flow, "data", flow), dtype=np.float64)


def dice(a, b, label):
    """2|A n B| / (|A| + |B|) for one label; 1.0 when the label is absent from both."""
    a = np.asarray(a) == label
    b = np.asarray(b) == label
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def dice_per_label(a, b, labels=None):
    if labels is None:
        labels = sorted(set(np.unique(a)) | set(np.unique(b)) - {0})
    return {int(lab): dice(a, b, lab) for lab in labels if lab != 0}


def jacobian_determinant(field):
    """det of d(p + field)/dp by forward differences, last row/column dropped.

    Input (2, H, W) or (N, 2, H, W); output (..., H-1, W-1).
    """
    f = _flow_array(field)
    fx, fy = f[..., 0, :, :], f[..., 1, :, :]
    dfx_dx = fx[..., :-1, 1:] - fx[..., :-1, :-1]
    dfx_dy = fx[..., 1:, :-1] - fx[..., :-1, :-1]
    dfy_dx = fy[..., :-1, 1:] - fy[..., :-1, :-1]
    dfy_dy = fy[..., 1:, :-1] - fy[..., :-1, :-1]
    return (1 + dfx_dx) * (1 + dfy_dy) - dfx_dy * dfy_dx


def folding_ratio(field):
    """Fraction of interior pixels whose Jacobian determinant is <= 0."""
    det = jacobian_determinant(field)
    return float(np.mean(det <= 0))


def invert_field(field, iters=50):
    """Approximate inverse displacement by fixed-point iteration.

    Solves inv(p) = -field(p + inv(p)), so warping by ``field`` and then by
    the result returns (approximately) to the start.
    """
    from . import kernels

    f = _flow_array(field)
    single = f.ndim == 3
    if single:
        f = f[None]
    n, _, H, W = f.shape
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64),
                         indexing="ij")
    inv = -f.copy()
    for _ in range(iters):
        x = (xs + inv[:, 0]).reshape(n, -1)
        y = (ys + inv[:, 1]).reshape(n, -1)
        inv = -kernels.bilinear_gather(f, x, y).reshape(n, 2, H, W)
    return inv[0] if single else inv


def endpoint_error(pred, target):
    """Mean Euclidean distance between two displacement fields."""
    p = _flow_array(pred)
    t = _flow_array(target)
    return float(np.mean(np.sqrt(((p - t) ** 2).sum(axis=-3))))


def mean_magnitude(field):
    f = _flow_array(field)
    return float(np.mean(np.sqrt((f ** 2).sum(axis=-3))))


def time_pair(run, *args, **kwargs):
    """Wall-clock seconds (monotonic clock) of one call to ``run``."""
    start = time.perf_counter()
    run(*args, **kwargs)
    return time.perf_counter() - start


def format_record(record):
    """One-line ``key=value`` rendering; floats with 6 significant digits."""
    parts = []
    for key, val in record.items():
        if isinstance(val, float):
            val = f"{val:.6g}"
        parts.append(f"{key}={val}")
    return " ".join(parts)
