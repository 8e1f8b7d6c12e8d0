"""Learned blocks: shared feature/context encoder, convolutional GRU, flow head."""
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, concat, get_default_dtype, leaky_relu, sigmoid, split, tanh

LEAKY_SLOPE = 0.1


class Module:
    """Minimal parameter container.

    Parameters are Tensor attributes with ``requires_grad``; sub-modules are
    Module attributes (or lists of them). Names are dotted attribute paths.
    """

    training = True

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, np.ndarray):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to(self, dtype):
        """Cast every parameter and buffer in place (used for float64 checks)."""
        for m in self.modules():
            for key, val in list(vars(m).items()):
                if isinstance(val, Tensor) and val.requires_grad:
                    setattr(m, key, Tensor(val.data, requires_grad=True, dtype=dtype))
                elif isinstance(val, np.ndarray):
                    setattr(m, key, val.astype(dtype))
        return self


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, rng=None, bias=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2
        self.weight = _uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def zero_(self):
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        dtype = get_default_dtype()
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBlock(Module):
    """conv -> batch norm -> leaky ReLU."""

    def __init__(self, cin, cout, stride=1, rng=None):
        self.conv = Conv2d(cin, cout, 3, stride, rng=rng, bias=False)
        self.norm = BatchNorm2d(cout)

    def __call__(self, x):
        return leaky_relu(self.norm(self.conv(x)), LEAKY_SLOPE)


@dataclass
class FeatureMaps:
    """Half-resolution encoder outputs for one batch of image pairs."""

    hM: Tensor
    hF: Tensor
    context: Tensor

    @property
    def features(self):
        """The 8-channel map: channels 0-3 fixed, 4-7 moving."""
        return concat([self.hF, self.hM], axis=self.hF.ndim - 3)


class Encoder(Module):
    """Small U-shaped trunk shared by the feature and context heads.

    Down path 16 -> 32 -> 32 channels (two stride-2 convs), one skip-joined
    up step back to half resolution. Only the two 1x1 heads differ.
    """

    def __init__(self, rng=None, feature_dim=4, context_dim=32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stem = ConvBlock(1, 16, rng=rng)
        self.down1 = ConvBlock(16, 32, stride=2, rng=rng)
        self.block1 = ConvBlock(32, 32, rng=rng)
        self.down2 = ConvBlock(32, 32, stride=2, rng=rng)
        self.block2 = ConvBlock(32, 32, rng=rng)
        self.up1 = ConvBlock(64, 32, rng=rng)
        self.feature_head = Conv2d(32, feature_dim, 1, rng=rng)
        self.context_head = Conv2d(64, context_dim, 1, rng=rng)

    def trunk(self, x):
        x = self.stem(x)
        skip = self.block1(self.down1(x))
        deep = self.block2(self.down2(skip))
        return self.up1(concat([F.upsample2x_bilinear(deep), skip], axis=1))

    def __call__(self, moving, fixed):
        return encode(moving, fixed, self)


def encode(moving, fixed, enc):
    """Encode a (moving, fixed) pair; both go through the same trunk in one batch.

    Accepts (1, H, W) images or (N, 1, H, W) batches.
    """
    unbatched = moving.ndim == 3
    if unbatched:
        moving = moving.reshape(1, *moving.shape)
        fixed = fixed.reshape(1, *fixed.shape)
    if moving.shape != fixed.shape:
        raise ValueError(f"moving {moving.shape} and fixed {fixed.shape} differ in shape")
    H, W = moving.shape[-2:]
    if H % 4 or W % 4:
        raise ValueError(f"image size {H}x{W} must be divisible by 4; pad the input first")
    n = moving.shape[0]
    trunk = enc.trunk(concat([fixed, moving], axis=0))
    feats = enc.feature_head(trunk)
    hF, hM = feats[:n], feats[n:]
    context = enc.context_head(concat([trunk[:n], trunk[n:]], axis=1))
    if unbatched:
        return FeatureMaps(hM.reshape(hM.shape[1:]), hF.reshape(hF.shape[1:]),
                           context.reshape(context.shape[1:]))
    return FeatureMaps(hM, hF, context)


class ConvGRU(Module):
    """Convolutional GRU with separate input/hidden kernels per gate."""

    def __init__(self, input_dim, hidden_dim=64, kernel=3, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.padding = kernel // 2
        fx = input_dim * kernel * kernel
        fh = hidden_dim * kernel * kernel
        shape_x = (hidden_dim, input_dim, kernel, kernel)
        shape_h = (hidden_dim, hidden_dim, kernel, kernel)
        self.W_xr = _uniform(rng, shape_x, fx + fh)
        self.W_r = _uniform(rng, shape_h, fx + fh)
        self.b_r = Tensor(np.zeros(hidden_dim), requires_grad=True)
        self.W_xz = _uniform(rng, shape_x, fx + fh)
        self.W_z = _uniform(rng, shape_h, fx + fh)
        self.b_z = Tensor(np.zeros(hidden_dim), requires_grad=True)
        self.W_hx = _uniform(rng, shape_x, fx + fh)
        self.W_h = _uniform(rng, shape_h, fx + fh)
        self.b_h = Tensor(np.zeros(hidden_dim), requires_grad=True)

    def project_input(self, x, channels=None):
        """Input contribution to all three gates, stacked (r, z, candidate).

        ``channels`` picks a slice of the input channels so that a constant
        part of the input can be projected once and reused across steps.
        """
        w = concat([self.W_xr, self.W_xz, self.W_hx], axis=0)
        if channels is not None:
            w = w[:, channels]
        return F.conv2d(x, w, None, 1, self.padding)

    def step(self, xproj, h):
        hd = self.hidden_dim
        xr, xz, xh = split(xproj, [hd, hd, hd], axis=1)
        hrz = F.conv2d(h, concat([self.W_r, self.W_z], axis=0), None, 1, self.padding)
        hr, hz = split(hrz, [hd, hd], axis=1)
        r = sigmoid(xr + hr + self.b_r.reshape(1, hd, 1, 1))
        z = sigmoid(xz + hz + self.b_z.reshape(1, hd, 1, 1))
        cand = tanh(xh + F.conv2d(r * h, self.W_h, None, 1, self.padding)
                    + self.b_h.reshape(1, hd, 1, 1))
        return h + z * (cand - h)

    def __call__(self, x, h):
        return gru_cell(x, h, self)


def gru_cell(x, h_prev, gru):
    """One GRU update; accepts (C, h, w) or (N, C, h, w) tensors."""
    unbatched = x.ndim == 3
    if unbatched:
        x = x.reshape(1, *x.shape)
        h_prev = h_prev.reshape(1, *h_prev.shape)
    if x.shape[1] != gru.input_dim or h_prev.shape[1] != gru.hidden_dim:
        raise ValueError(
            f"gru_cell: got input/hidden channels {x.shape[1]}/{h_prev.shape[1]}, "
            f"expected {gru.input_dim}/{gru.hidden_dim}"
        )
    out = gru.step(gru.project_input(x), h_prev)
    return out.reshape(out.shape[1:]) if unbatched else out


class FlowHead(Module):
    """Two 3x3 convs mapping the hidden state to a 2-channel field update."""

    def __init__(self, hidden_dim=64, mid_dim=32, rng=None, zero_init=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.conv1 = Conv2d(hidden_dim, mid_dim, 3, rng=rng)
        self.conv2 = Conv2d(mid_dim, 2, 3, rng=rng)
        if zero_init:
            self.conv2.zero_()

    def __call__(self, hidden):
        return flow_head(hidden, self)


def flow_head(hidden, head):
    unbatched = hidden.ndim == 3
    if unbatched:
        hidden = hidden.reshape(1, *hidden.shape)
    out = head.conv2(leaky_relu(head.conv1(hidden), LEAKY_SLOPE))
    return out.reshape(out.shape[1:]) if unbatched else out
