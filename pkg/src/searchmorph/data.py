"""Synthetic image pairs with known deformations."""
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import io, kernels
from .losses import warp_labels
from .metrics import folding_ratio, invert_field


@dataclass
class ImagePair:
    """A moving/fixed pair from disk; masks are optional label maps."""

    fixed: np.ndarray
    moving: np.ndarray
    fixed_mask: np.ndarray = None
    moving_mask: np.ndarray = None


@dataclass
class SynthPair:
    """``moving`` is ``fixed`` resampled at p + gt_field(p).

    ``target_field`` is the displacement that maps the moving image back onto
    the fixed one (the inverse of ``gt_field``); it is what registration
    should recover. All images are float32 (H, W) in [0, 1]; masks are int.
    """

    fixed: np.ndarray
    moving: np.ndarray
    gt_field: np.ndarray
    target_field: np.ndarray
    fixed_mask: np.ndarray
    moving_mask: np.ndarray


def _texture(rng, H, W):
    img = np.zeros((H, W))
    for sigma, weight in ((1.0, 0.35), (2.5, 0.65)):
        noise = ndimage.gaussian_filter(rng.standard_normal((H, W)), sigma, mode="wrap")
        img += weight * noise / noise.std()
    return img


def _structures(rng, H, W):
    mask = np.zeros((H, W), dtype=np.int64)
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    for label in range(1, rng.integers(1, 4) + 1):
        cy = rng.uniform(0.25, 0.75) * H
        cx = rng.uniform(0.25, 0.75) * W
        ry = rng.uniform(0.12, 0.25) * H
        rx = rng.uniform(0.12, 0.25) * W
        theta = rng.uniform(0, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        u = (xs - cx) * c + (ys - cy) * s
        v = -(xs - cx) * s + (ys - cy) * c
        mask[(u / rx) ** 2 + (v / ry) ** 2 <= 1] = label
    return mask


def blur_window(H, W):
    """Box width used to smooth random fields: a quarter of the image, odd."""
    return max(3, (min(H, W) // 4) | 1)


def random_field(rng, H, W, max_disp, smoothness):
    """Random displacement smoothed by ``smoothness`` box blurs, scaled so the
    largest absolute component equals ``max_disp``."""
    f = rng.standard_normal((2, H, W))
    size = blur_window(H, W)
    for _ in range(smoothness):
        f = ndimage.uniform_filter(f, size=(1, size, size), mode="reflect")
    peak = np.abs(f).max()
    if max_disp == 0 or peak == 0:
        return np.zeros((2, H, W))
    return f * (max_disp / peak)


def _warp_image(img, field):
    H, W = img.shape
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    x = (xs + field[0]).reshape(1, -1)
    y = (ys + field[1]).reshape(1, -1)
    out = kernels.bilinear_gather(img[None, None].astype(np.float64), x, y)
    return out.reshape(H, W)


def make_pair(rng, size, max_disp, smoothness=4, max_tries=20):
    H, W = size
    tex = _texture(rng, H, W)
    mask = _structures(rng, H, W)
    offsets = rng.uniform(-1.5, 1.5, size=mask.max() + 1)
    offsets[0] = 0.0
    img = tex + offsets[mask] * 1.5
    img = (img - img.min()) / (img.max() - img.min())
    smooth = smoothness
    for _ in range(max_tries):
        field = random_field(rng, H, W, max_disp, smooth)
        if folding_ratio(field) == 0:
            break
        smooth += 1
    else:
        raise RuntimeError("could not draw a fold-free field; lower max_disp")
    moving = _warp_image(img, field) if max_disp else img.copy()
    return SynthPair(
        fixed=img.astype(np.float32),
        moving=moving.astype(np.float32),
        gt_field=field.astype(np.float32),
        target_field=invert_field(field).astype(np.float32),
        fixed_mask=mask,
        moving_mask=warp_labels(mask, field),
    )


def synth_generate(n, size=(64, 64), max_disp=12.0, smoothness=4, seed=0):
    """``n`` pairs from one seeded generator (bitwise reproducible)."""
    if max_disp < 0:
        raise ValueError("max_disp must be >= 0")
    rng = np.random.default_rng(seed)
    return [make_pair(rng, size, max_disp, smoothness) for _ in range(n)]


def stack_pairs(pairs):
    """Batch arrays (N, 1, H, W) for moving and fixed images."""
    moving = np.stack([p.moving for p in pairs])[:, None]
    fixed = np.stack([p.fixed for p in pairs])[:, None]
    return moving, fixed


PAIR_FILES = ("fixed.pgm", "moving.pgm")


def save_pair(directory, pair):
    """Write one pair as PGM images, PGM label masks and TNSR fields."""
    os.makedirs(directory, exist_ok=True)
    io.write_pgm(os.path.join(directory, "fixed.pgm"), pair.fixed)
    io.write_pgm(os.path.join(directory, "moving.pgm"), pair.moving)
    if pair.fixed_mask is not None:
        io.write_pgm(os.path.join(directory, "fixed_mask.pgm"), pair.fixed_mask.astype(np.uint8))
        io.write_pgm(os.path.join(directory, "moving_mask.pgm"), pair.moving_mask.astype(np.uint8))
    if isinstance(pair, SynthPair):
        io.save_tnsr(os.path.join(directory, "gt_field.tnsr"), pair.gt_field)
        io.save_tnsr(os.path.join(directory, "target_field.tnsr"), pair.target_field)


def load_pair(directory):
    """Inverse of :func:`save_pair`. Images are padded to a multiple of 4.

    A directory with both field files gives a :class:`SynthPair`.
    """
    def path(name):
        return os.path.join(directory, name)

    fixed, pad = io.load_pgm(path("fixed.pgm"))
    moving, mpad = io.load_pgm(path("moving.pgm"))
    if fixed.shape != moving.shape:
        raise io.FormatError(f"{directory}: moving {moving.shape} and fixed {fixed.shape} differ")
    masks = [None, None]
    if os.path.exists(path("fixed_mask.pgm")) and os.path.exists(path("moving_mask.pgm")):
        masks = [io.load_mask(path("fixed_mask.pgm"))[0], io.load_mask(path("moving_mask.pgm"))[0]]
    f, m = fixed.data[0], moving.data[0]
    if os.path.exists(path("gt_field.tnsr")) and os.path.exists(path("target_field.tnsr")):
        if pad != (0, 0, 0, 0):
            raise io.FormatError(f"{directory}: synthetic pairs must not need padding")
        return SynthPair(f, m, io.load_tnsr(path("gt_field.tnsr")),
                         io.load_tnsr(path("target_field.tnsr")), *masks)
    return ImagePair(f, m, *masks)


def load_corpus(directory):
    """Every pair sub-directory of ``directory``, in sorted name order."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"corpus directory {directory} does not exist")
    names = sorted(
        d for d in os.listdir(directory)
        if all(os.path.exists(os.path.join(directory, d, f)) for f in PAIR_FILES)
    )
    if not names:
        raise io.FormatError(f"{directory}: no pair directories with {' and '.join(PAIR_FILES)}")
    return [load_pair(os.path.join(directory, d)) for d in names]
