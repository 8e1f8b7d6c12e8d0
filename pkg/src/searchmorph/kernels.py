"""Hot bilinear sampling kernels.

Every kernel exists twice: a numba version and a vectorised numpy version.
The public names dispatch on ``_accel.USE_NUMBA``. Coordinates are in pixel
units, ``x`` along the last (width) axis and ``y`` along the height axis, and
are clamped to the image border before interpolation.

Shapes: ``img`` is (B, C, H, W), ``x`` and ``y`` are (B, P); samples come
back as (B, C, P).
"""
import numpy as np

from . import _accel
from ._accel import njit


def _corners_numpy(x, y, H, W):
    xc = np.clip(x, 0.0, W - 1)
    yc = np.clip(y, 0.0, H - 1)
    x0 = np.minimum(np.floor(xc), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(yc), max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (xc - x0).astype(x.dtype)
    wy = (yc - y0).astype(y.dtype)
    return x0, x1, y0, y1, wx, wy


def bilinear_gather_numpy(img, x, y):
    B, C, H, W = img.shape
    x0, x1, y0, y1, wx, wy = _corners_numpy(x, y, H, W)
    flat = img.reshape(B, C, H * W)

    def take(yi, xi):
        return np.take_along_axis(flat, (yi * W + xi)[:, None, :], axis=2)

    wx = wx[:, None, :]
    wy = wy[:, None, :]
    top = take(y0, x0) * (1 - wx) + take(y0, x1) * wx
    bot = take(y1, x0) * (1 - wx) + take(y1, x1) * wx
    return top * (1 - wy) + bot * wy


def bilinear_scatter_numpy(grad, img, x, y, need_img=True, need_coords=True):
    """Adjoint of :func:`bilinear_gather_numpy`.

    Returns ``(grad_img, grad_x, grad_y)``; entries not requested are None.
    """
    B, C, H, W = img.shape
    x0, x1, y0, y1, wx, wy = _corners_numpy(x, y, H, W)
    grad_img = grad_x = grad_y = None
    if need_img:
        base = (np.arange(B * C) * (H * W)).reshape(B, C, 1)
        acc = np.zeros(B * C * H * W, dtype=np.float64)
        for yi, xi, w in (
            (y0, x0, (1 - wx) * (1 - wy)),
            (y0, x1, wx * (1 - wy)),
            (y1, x0, (1 - wx) * wy),
            (y1, x1, wx * wy),
        ):
            idx = base + (yi * W + xi)[:, None, :]
            acc += np.bincount(
                idx.ravel(), weights=(grad * w[:, None, :]).ravel(), minlength=acc.size
            )
        grad_img = acc.astype(img.dtype).reshape(B, C, H, W)
    if need_coords:
        flat = img.reshape(B, C, H * W)

        def take(yi, xi):
            return np.take_along_axis(flat, (yi * W + xi)[:, None, :], axis=2)

        v00, v01, v10, v11 = take(y0, x0), take(y0, x1), take(y1, x0), take(y1, x1)
        wxb = wx[:, None, :]
        wyb = wy[:, None, :]
        dx = (1 - wyb) * (v01 - v00) + wyb * (v11 - v10)
        dy = (1 - wxb) * (v10 - v00) + wxb * (v11 - v01)
        inside_x = (x >= 0) & (x <= W - 1)
        inside_y = (y >= 0) & (y <= H - 1)
        grad_x = np.where(inside_x, (grad * dx).sum(axis=1), 0).astype(x.dtype)
        grad_y = np.where(inside_y, (grad * dy).sum(axis=1), 0).astype(y.dtype)
    return grad_img, grad_x, grad_y


@njit(cache=True)
def _gather_nb(img, x, y, out):
    B, C, H, W = img.shape
    P = x.shape[1]
    xmax = max(W - 2, 0)
    ymax = max(H - 2, 0)
    for b in range(B):
        for p in range(P):
            xc = min(max(x[b, p], 0.0), W - 1.0)
            yc = min(max(y[b, p], 0.0), H - 1.0)
            x0 = min(int(np.floor(xc)), xmax)
            y0 = min(int(np.floor(yc)), ymax)
            x1 = min(x0 + 1, W - 1)
            y1 = min(y0 + 1, H - 1)
            wx = xc - x0
            wy = yc - y0
            for c in range(C):
                top = img[b, c, y0, x0] * (1 - wx) + img[b, c, y0, x1] * wx
                bot = img[b, c, y1, x0] * (1 - wx) + img[b, c, y1, x1] * wx
                out[b, c, p] = top * (1 - wy) + bot * wy


@njit(cache=True)
def _scatter_nb(grad, img, x, y, gimg, gx, gy, need_img, need_coords):
    B, C, H, W = img.shape
    P = x.shape[1]
    xmax = max(W - 2, 0)
    ymax = max(H - 2, 0)
    for b in range(B):
        for p in range(P):
            xr = x[b, p]
            yr = y[b, p]
            xc = min(max(xr, 0.0), W - 1.0)
            yc = min(max(yr, 0.0), H - 1.0)
            x0 = min(int(np.floor(xc)), xmax)
            y0 = min(int(np.floor(yc)), ymax)
            x1 = min(x0 + 1, W - 1)
            y1 = min(y0 + 1, H - 1)
            wx = xc - x0
            wy = yc - y0
            sx = 0.0
            sy = 0.0
            for c in range(C):
                g = grad[b, c, p]
                if need_img:
                    gimg[b, c, y0, x0] += g * (1 - wx) * (1 - wy)
                    gimg[b, c, y0, x1] += g * wx * (1 - wy)
                    gimg[b, c, y1, x0] += g * (1 - wx) * wy
                    gimg[b, c, y1, x1] += g * wx * wy
                if need_coords:
                    v00 = img[b, c, y0, x0]
                    v01 = img[b, c, y0, x1]
                    v10 = img[b, c, y1, x0]
                    v11 = img[b, c, y1, x1]
                    sx += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10))
                    sy += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01))
            if need_coords:
                if 0.0 <= xr <= W - 1.0:
                    gx[b, p] = sx
                if 0.0 <= yr <= H - 1.0:
                    gy[b, p] = sy


def bilinear_gather_numba(img, x, y):
    B, C = img.shape[:2]
    out = np.empty((B, C, x.shape[1]), dtype=img.dtype)
    _gather_nb(img, x, y, out)
    return out


def bilinear_scatter_numba(grad, img, x, y, need_img=True, need_coords=True):
    gimg = np.zeros(img.shape if need_img else (1, 1, 1, 1), dtype=img.dtype)
    gx = np.zeros(x.shape if need_coords else (1, 1), dtype=x.dtype)
    gy = np.zeros(y.shape if need_coords else (1, 1), dtype=y.dtype)
    _scatter_nb(grad, img, x, y, gimg, gx, gy, need_img, need_coords)
    return (
        gimg if need_img else None,
        gx if need_coords else None,
        gy if need_coords else None,
    )


def _prepare(img, x, y):
    img = np.ascontiguousarray(img)
    x = np.ascontiguousarray(x, dtype=img.dtype)
    y = np.ascontiguousarray(y, dtype=img.dtype)
    return img, x, y


def bilinear_gather(img, x, y):
    img, x, y = _prepare(img, x, y)
    if _accel.USE_NUMBA:
        return bilinear_gather_numba(img, x, y)
    return bilinear_gather_numpy(img, x, y)


def bilinear_scatter(grad, img, x, y, need_img=True, need_coords=True):
    img, x, y = _prepare(img, x, y)
    grad = np.ascontiguousarray(grad, dtype=img.dtype)
    if _accel.USE_NUMBA:
        return bilinear_scatter_numba(grad, img, x, y, need_img, need_coords)
    return bilinear_scatter_numpy(grad, img, x, y, need_img, need_coords)
