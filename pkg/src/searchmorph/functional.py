"""Image-shaped differentiable ops: convolution, pooling, sampling, norms."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .tensor import Tensor


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2D cross-correlation of ``x`` (N, C, H, W) with ``weight`` (K, C, kh, kw)."""
    N, C, H, W = x.shape
    K, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ValueError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d: kernel sizes must be odd")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    p, s = padding, stride
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if kh == 1 and kw == 1:
        win = xp[:, :, ::s, ::s][:, :, :Ho, :Wo, None, None]
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    # cols: (C*kh*kw, N*Ho*Wo)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(C * kh * kw, N * Ho * Wo)
    w2 = weight.data.reshape(K, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(K, N, Ho, Wo).transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(K, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(C, kh, kw, N, Ho, Wo)
            gxp = np.zeros((N, C, H + 2 * p, W + 2 * p), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += gcols[:, i, j].transpose(
                        1, 0, 2, 3
                    )
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, bw, "conv2d")


def avg_pool2d(x, kernel):
    """Mean over non-overlapping ``kernel`` x ``kernel`` blocks of the last two axes.

    Sizes that are not multiples of ``kernel`` are first extended by repeating
    the last row/column.
    """
    kernel = int(kernel)
    if kernel <= 0:
        raise ValueError("avg_pool2d: kernel must be positive")
    if kernel == 1:
        return x
    *lead, H, W = x.shape
    Ho = -(-H // kernel)
    Wo = -(-W // kernel)
    ph, pw = Ho * kernel - H, Wo * kernel - W
    data = x.data
    if ph or pw:
        cfg = [(0, 0)] * len(lead) + [(0, ph), (0, pw)]
        data = np.pad(data, cfg, mode="edge")
    # strided block sums touch each input element once; much faster than a
    # reshape + mean over interleaved axes on large cost volumes
    scale = 1.0 / (kernel * kernel)
    out = np.zeros((*lead, Ho, Wo), dtype=data.dtype)
    for a in range(kernel):
        for b in range(kernel):
            out += data[..., a::kernel, b::kernel]
    out *= scale

    def bw(g):
        full = np.empty((*lead, Ho * kernel, Wo * kernel), dtype=g.dtype)
        gs = g * scale
        for a in range(kernel):
            for b in range(kernel):
                full[..., a::kernel, b::kernel] = gs
        if ph:
            full[..., H - 1, :] = full[..., H - 1 :, :].sum(axis=-2)
            full = full[..., :H, :]
        if pw:
            full[..., W - 1] = full[..., W - 1 :].sum(axis=-1)
            full = full[..., :W]
        return (np.ascontiguousarray(full),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x,), bw, "avg_pool2d")


def grid_sample(x, coords):
    """Bilinear sampling of ``x`` at pixel coordinates, clamped to the border.

    ``x`` is (N, C, H, W) and ``coords`` (N, 2, Ho, Wo) with channel 0 the x
    (column) position and channel 1 the y (row) position. Unbatched inputs
    (C, H, W) / (2, Ho, Wo) are accepted and give an unbatched result.
    """
    unbatched = x.ndim == 3
    if unbatched:
        x = x.reshape(1, *x.shape)
        coords = coords.reshape(1, *coords.shape)
    N, C, H, W = x.shape
    Nc, two, Ho, Wo = coords.shape
    if two != 2 or Nc != N:
        raise ValueError(f"grid_sample: coords shape {coords.shape} does not fit input {x.shape}")
    cx = coords.data[:, 0].reshape(N, -1)
    cy = coords.data[:, 1].reshape(N, -1)
    out = kernels.bilinear_gather(x.data, cx, cy).reshape(N, C, Ho, Wo)

    def bw(g):
        gi, gx, gy = kernels.bilinear_scatter(
            g.reshape(N, C, -1), x.data, cx, cy,
            need_img=x.requires_grad, need_coords=coords.requires_grad,
        )
        gc = None
        if gx is not None:
            gc = np.stack([gx.reshape(N, Ho, Wo), gy.reshape(N, Ho, Wo)], axis=1)
        return gi, gc

    out = Tensor._from_op(out, (x, coords), bw, "grid_sample")
    if unbatched:
        out = out.reshape(C, Ho, Wo)
    return out


def identity_grid(H, W, dtype=None):
    """(2, H, W) array holding each pixel's own (x, y) position."""
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    return np.stack([xs, ys]).astype(dtype or np.float32)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch norm over (N, H, W). Running buffers are updated in place."""
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shape).astype(x.dtype)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            n = x.size // x.shape[1]
            gx = (inv.reshape(shape) / n) * (
                n * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(shape)
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), bw, "batch_norm")


def _up_axis(a, axis):
    n = a.shape[axis]
    nxt = np.take(a, np.minimum(np.arange(n) + 1, n - 1), axis=axis)
    odd = 0.5 * (a + nxt)
    out = np.stack([a, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] = 2 * n
    return out.reshape(shape)


def _up_axis_adjoint(g, axis):
    shape = list(g.shape)
    n = shape[axis] // 2
    shape[axis : axis + 1] = [n, 2]
    g = g.reshape(shape)
    even = np.take(g, 0, axis=axis + 1)
    odd = 0.5 * np.take(g, 1, axis=axis + 1)
    res = even + odd
    # odd sample i also reads from i + 1 (clamped at the end)
    src = [slice(None)] * res.ndim
    dst = [slice(None)] * res.ndim
    src[axis] = slice(0, n - 1)
    dst[axis] = slice(1, n)
    res[tuple(dst)] += odd[tuple(src)]
    last = [slice(None)] * res.ndim
    last[axis] = slice(n - 1, n)
    res[tuple(last)] += odd[tuple(last)]
    return res


def upsample2x_bilinear(x):
    """Double the last two axes; output pixel p samples the input at p / 2."""
    out = _up_axis(_up_axis(x.data, x.ndim - 2), x.ndim - 1)

    def bw(g):
        return (_up_axis_adjoint(_up_axis_adjoint(g, x.ndim - 1), x.ndim - 2),)

    return Tensor._from_op(out, (x,), bw, "upsample2x")


def _box_sum(a, window):
    r = window // 2
    H, W = a.shape[-2:]
    cfg = [(0, 0)] * (a.ndim - 2) + [(r + 1, r), (r + 1, r)]
    c = np.pad(a, cfg).cumsum(axis=-2).cumsum(axis=-1)
    return (
        c[..., window:, window:]
        - c[..., :H, window:]
        - c[..., window:, :W]
        + c[..., :H, :W]
    )


def box_filter(x, window):
    """Sum over a zero-padded ``window`` x ``window`` neighbourhood (odd window)."""
    if window % 2 != 1:
        raise ValueError("box_filter: window must be odd")
    out = _box_sum(x.data.astype(np.float64), window).astype(x.dtype)
    return Tensor._from_op(
        out, (x,), lambda g: (_box_sum(g.astype(np.float64), window).astype(g.dtype),), "box_filter"
    )
