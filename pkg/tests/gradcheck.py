"""Central finite-difference oracle shared by the gradient tests."""
from __future__ import annotations

import numpy as np

from shmgan.autodiff import Tensor, grad


def numeric_grad(f, arrays: list[np.ndarray], index: int) -> np.ndarray:
    """d f / d arrays[index] by central differences, h = 1e-5 * max(1, |x|)."""
    x = arrays[index]
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        h = 1e-5 * max(1.0, abs(orig))
        x[i] = orig + h
        fp = f(*arrays)
        x[i] = orig - h
        fm = f(*arrays)
        x[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def check_op(op, arrays: list[np.ndarray], rng: np.random.Generator) -> float:
    """Largest relative error of analytic vs numeric gradients of <op(...), w>.

    A random projection ``w`` turns any output into a scalar so every output
    element contributes.
    """
    probe = op(*[Tensor(a) for a in arrays]).data
    w = rng.normal(size=probe.shape)

    def scalar(*arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * w))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*leaves)
    from shmgan.autodiff import ops
    total = ops.sum(ops.mul(out, Tensor(w)))
    analytic = grad(total, leaves)
    worst = 0.0
    for k, leaf in enumerate(leaves):
        num = numeric_grad(scalar, [a.copy() for a in arrays], k)
        worst = max(worst, rel_error(analytic[leaf].data, num))
    return worst
