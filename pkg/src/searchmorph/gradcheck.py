"""Central finite-difference checks for the autodiff engine (float64)."""
import numpy as np

from .tensor import backward


def numerical_grad(fn, inputs, target, eps=1e-4, indices=None):
    """d fn() / d target.data by central differences.

    ``indices`` limits the evaluation to a list of flat positions; the other
    entries come back as NaN.
    """
    flat = target.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    todo = range(flat.size) if indices is None else indices
    for i in todo:
        old = flat[i]
        flat[i] = old + eps
        hi = float(fn(*inputs).data.sum())
        flat[i] = old - eps
        lo = float(fn(*inputs).data.sum())
        flat[i] = old
        grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(target.shape)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(fn, inputs, wrt=None, eps=1e-4, samples=None, rng=None):
    """Compare backprop against central differences for ``sum(fn(*inputs))``.

    Returns the worst relative error over the tensors in ``wrt`` (defaults to
    every input with ``requires_grad``). With ``samples`` set, only that many
    random entries per tensor are differenced.
    """
    wrt = [t for t in inputs if t.requires_grad] if wrt is None else list(wrt)
    for t in wrt:
        t.grad = None
    out = fn(*inputs)
    backward(out.sum() if out.size != 1 else out)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in wrt:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        idx = None
        if samples is not None and samples < t.size:
            idx = rng.choice(t.size, size=samples, replace=False)
        numeric = numerical_grad(fn, inputs, t, eps=eps, indices=idx)
        if idx is None:
            err = relative_error(analytic, numeric)
        else:
            err = relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx])
        worst = max(worst, err)
    return worst
