"""Differentiable ops.

Backward rules only use ops defined here, which keeps every gradient
differentiable a second time.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class GeometryError(ValueError):
    """Convolution geometry gives an empty or negative output length."""


# --------------------------------------------------------------------------
# broadcasting helpers

def _reduce_shape(data: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if data.shape == shape:
        return data
    extra = data.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, s in enumerate(shape) if s == 1 and data.shape[i + extra] != 1
    )
    out = data.sum(axis=axes, keepdims=True) if axes else data
    if extra:
        out = out.reshape(out.shape[extra:])
    return out.reshape(shape)


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape`` (inverse of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    return make_result(_reduce_shape(x.data, shape), (x,),
                       lambda g, needs: (broadcast_to(g, in_shape),), "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    data = np.broadcast_to(x.data, shape).copy()
    return make_result(data, (x,), lambda g, needs: (sum_to(g, in_shape),), "broadcast_to")


# --------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g, needs: (sum_to(g, sa) if needs[0] else None,
                                         sum_to(g, sb) if needs[1] else None), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g, needs: (sum_to(g, sa) if needs[0] else None,
                                         sum_to(neg(g), sb) if needs[1] else None), "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g, needs: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g, needs):
        ga = sum_to(mul(g, b), sa) if needs[0] else None
        gb = sum_to(mul(g, a), sb) if needs[1] else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g, needs):
        ga = sum_to(div(g, b), sa) if needs[0] else None
        gb = None
        if needs[1]:
            gb = sum_to(neg(div(mul(g, a), mul(b, b))), sb)
        return ga, gb

    return make_result(a.data / b.data, (a, b), backward, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return make_result(a.data ** p, (a,),
                       lambda g, needs: (mul(g, mul(power(a, p - 1.0), p)),), "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    holder: list[Tensor] = []
    out = make_result(np.exp(a.data), (a,), lambda g, needs: (mul(g, holder[0]),), "exp")
    holder.append(out)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g, needs: (div(g, a),), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    holder: list[Tensor] = []
    out = make_result(np.sqrt(a.data), (a,),
                      lambda g, needs: (div(g, mul(holder[0], 2.0)),), "sqrt")
    holder.append(out)
    return out


def safe_reciprocal(a) -> Tensor:
    """1/a where a != 0, and 0 where a == 0 (gradient likewise zeroed)."""
    a = as_tensor(a)
    nz = a.data != 0
    data = np.zeros_like(a.data)
    np.divide(1.0, a.data, out=data, where=nz)
    holder: list[Tensor] = []
    out = make_result(data, (a,),
                      lambda g, needs: (neg(mul(g, mul(holder[0], holder[0]))),), "safe_reciprocal")
    holder.append(out)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    a = as_tensor(a)
    mask = Tensor(((a.data >= lo) & (a.data <= hi)).astype(np.float64))
    return make_result(np.clip(a.data, lo, hi), (a,), lambda g, needs: (mul(g, mask),), "clip")


# --------------------------------------------------------------------------
# activations

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    return make_result(a.data * mask.data, (a,), lambda g, needs: (mul(g, mask),), "relu")


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {alpha}")
    a = as_tensor(a)
    slope = Tensor(np.where(a.data > 0, 1.0, alpha))
    return make_result(a.data * slope.data, (a,), lambda g, needs: (mul(g, slope),), "leaky_relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    holder: list[Tensor] = []

    def backward(g, needs):
        y = holder[0]
        return (mul(g, sub(1.0, mul(y, y))),)

    out = make_result(np.tanh(a.data), (a,), backward, "tanh")
    holder.append(out)
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    holder: list[Tensor] = []

    def backward(g, needs):
        y = holder[0]
        return (mul(g, mul(y, sub(1.0, y))),)

    out = make_result(_stable_sigmoid(a.data), (a,), backward, "sigmoid")
    holder.append(out)
    return out


def activation(a, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}")


def dropout(a, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(a.shape) >= p
    mask = Tensor(keep / (1.0 - p))
    return mul(a, mask)


# --------------------------------------------------------------------------
# reductions and shape ops

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise ValueError("empty reduction extent")
    in_shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def backward(g, needs):
        return (broadcast_to(reshape(g, kept), in_shape),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    if count == 0:
        raise ValueError("empty reduction extent")
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def sq_l2_norm(a) -> Tensor:
    """Sum of squares over every element."""
    a = as_tensor(a)
    return sum(mul(a, a))


def reduce(a, kind: str, axis=None, keepdims: bool = False) -> Tensor:
    if kind == "mean":
        return mean(a, axis=axis, keepdims=keepdims)
    if kind == "sum":
        return sum(a, axis=axis, keepdims=keepdims)
    if kind == "sq_l2_norm":
        if axis is not None:
            aa = as_tensor(a)
            return sum(mul(aa, aa), axis=axis, keepdims=keepdims)
        return sq_l2_norm(a)
    raise ValueError(f"unknown reduction {kind!r}")


def l2_norm(a, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm with a zero (sub)gradient at the origin."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))
    kept = n.shape
    out_data = n if keepdims else n.reshape([s for i, s in enumerate(kept) if i not in axes])

    def backward(g, needs):
        # d||a|| = a/||a||; safe_reciprocal keeps this finite at a == 0
        norm = l2_norm(a, axis=axes, keepdims=True)
        return (mul(a, mul(reshape(g, kept), safe_reciprocal(norm))),)

    return make_result(out_data, (a,), backward, "l2_norm")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    return make_result(a.data.reshape(shape), (a,),
                       lambda g, needs: (reshape(g, in_shape),), "reshape")


# --------------------------------------------------------------------------
# 1-D convolution family
#
# The three maps below share one trilinear form
#     T(x, w, y) = sum_{b,o,c,l,k} y[b,o,l] w[o,c,k] xpad[b,c,l*s+k]
# conv_fwd gives dT/dy, conv_input_adjoint dT/dx and conv_kernel_adjoint
# dT/dw, so each one's backward is written with the other two.

def conv_out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


def conv_transpose_out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length - 1) * stride - 2 * padding + k


def _windows(x: np.ndarray, k: int, stride: int, padding: int, lout: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(x, k, axis=2)
    return win[:, :, : (lout - 1) * stride + 1 : stride, :]


def _conv_fwd_np(x, w, stride, padding, lout):
    win = _windows(x, w.shape[2], stride, padding, lout)  # B, C, Lout, K
    return np.einsum("bclk,ock->bol", win, w, optimize=True)


def _conv_dx_np(y, w, stride, padding, length):
    bsz, _, lout = y.shape
    _, cin, k = w.shape
    full = np.zeros((bsz, cin, length + 2 * padding))
    cols = np.einsum("bol,ock->bclk", y, w, optimize=True)
    span = (lout - 1) * stride + 1
    for j in range(k):
        full[:, :, j : j + span : stride] += cols[:, :, :, j]
    return full[:, :, padding : padding + length]


def _conv_dw_np(x, y, stride, padding, k):
    win = _windows(x, k, stride, padding, y.shape[2])
    return np.einsum("bol,bclk->ock", y, win, optimize=True)


def _conv_fwd(x: Tensor, w: Tensor, stride: int, padding: int, lout: int) -> Tensor:
    length = x.shape[2]
    k = w.shape[2]

    def backward(g, needs):
        gx = _conv_dx(g, w, stride, padding, length) if needs[0] else None
        gw = _conv_dw(x, g, stride, padding, k) if needs[1] else None
        return gx, gw

    return make_result(_conv_fwd_np(x.data, w.data, stride, padding, lout),
                       (x, w), backward, "conv_fwd")


def _conv_dx(y: Tensor, w: Tensor, stride: int, padding: int, length: int) -> Tensor:
    lout = y.shape[2]
    k = w.shape[2]

    def backward(g, needs):
        gy = _conv_fwd(g, w, stride, padding, lout) if needs[0] else None
        gw = _conv_dw(g, y, stride, padding, k) if needs[1] else None
        return gy, gw

    return make_result(_conv_dx_np(y.data, w.data, stride, padding, length),
                       (y, w), backward, "conv_dx")


def _conv_dw(x: Tensor, y: Tensor, stride: int, padding: int, k: int) -> Tensor:
    length = x.shape[2]
    lout = y.shape[2]

    def backward(g, needs):
        gx = _conv_dx(y, g, stride, padding, length) if needs[0] else None
        gy = _conv_fwd(x, g, stride, padding, lout) if needs[1] else None
        return gx, gy

    return make_result(_conv_dw_np(x.data, y.data, stride, padding, k),
                       (x, y), backward, "conv_dw")


def _check_conv_args(x: Tensor, w: Tensor, stride: int, padding: int, what: str) -> None:
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"{what}: expected input [B,C,L] and kernel rank 3, "
                         f"got {x.shape} and {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"{what}: need stride >= 1 and padding >= 0, got {stride}, {padding}")


def _add_bias(y: Tensor, bias) -> Tensor:
    if bias is None:
        return y
    bias = as_tensor(bias)
    if bias.shape != (y.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match {y.shape[1]} channels")
    return add(y, reshape(bias, (1, -1, 1)))


def conv1d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B,Cin,L] with kernel [Cout,Cin,K]."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel, stride, padding, "conv1d")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    lout = conv_out_len(x.shape[2], kernel.shape[2], stride, padding)
    if x.shape[2] + 2 * padding < kernel.shape[2] or lout <= 0:
        raise GeometryError(f"conv1d: length {x.shape[2]} with K={kernel.shape[2]}, "
                            f"s={stride}, p={padding} gives no output")
    return _add_bias(_conv_fwd(x, kernel, stride, padding, lout), bias)


def conv_transpose1d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transpose convolution of x [B,Cin,L] with kernel [Cin,Cout,K].

    With zero bias this is the adjoint of ``conv1d`` using the same kernel.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel, stride, padding, "conv_transpose1d")
    if x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"conv_transpose1d: input has {x.shape[1]} channels, "
                         f"kernel expects {kernel.shape[0]}")
    lout = conv_transpose_out_len(x.shape[2], kernel.shape[2], stride, padding)
    if lout < 1:
        raise GeometryError(f"conv_transpose1d: length {x.shape[2]} with K={kernel.shape[2]}, "
                            f"s={stride}, p={padding} gives no output")
    return _add_bias(_conv_dx(x, kernel, stride, padding, lout), bias)


# --------------------------------------------------------------------------
# normalisation layers (composites, so higher-order gradients come for free)

def _affine(xhat: Tensor, gamma, beta) -> Tensor:
    c = xhat.shape[1]
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"norm affine params {gamma.shape}/{beta.shape} do not match {c} channels")
    return add(mul(xhat, reshape(gamma, (1, c, 1))), reshape(beta, (1, c, 1)))


def batch_norm1d(x, gamma, beta, running_mean: np.ndarray | None = None,
                 running_var: np.ndarray | None = None, training: bool = True,
                 momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over (B, L).

    In training mode the running buffers (numpy arrays) are updated in place
    with the biased batch mean and the unbiased batch variance.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"batch_norm1d expects [B,C,L], got {x.shape}")
    c = x.shape[1]
    if as_tensor(gamma).shape != (c,):
        raise ShapeError(f"batch_norm1d: gamma has shape {as_tensor(gamma).shape}, input has {c} channels")
    if training:
        n = x.shape[0] * x.shape[2]
        if n < 2:
            raise ValueError("batch_norm1d in train mode needs B*L >= 2")
        mu = mean(x, axis=(0, 2), keepdims=True)
        centred = sub(x, mu)
        var = mean(mul(centred, centred), axis=(0, 2), keepdims=True)
        if running_mean is not None and running_var is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.data.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.data.reshape(c) * n / (n - 1)
        xhat = div(centred, sqrt(add(var, eps)))
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batch_norm1d needs running statistics")
        rm = Tensor(running_mean.reshape(1, c, 1))
        rs = Tensor(np.sqrt(running_var.reshape(1, c, 1) + eps))
        xhat = div(sub(x, rm), rs)
    return _affine(xhat, gamma, beta)


def instance_norm1d(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise each (b, c) row over its L samples."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"instance_norm1d expects [B,C,L], got {x.shape}")
    if x.shape[2] < 2:
        raise ValueError("instance_norm1d needs L >= 2")
    mu = mean(x, axis=2, keepdims=True)
    centred = sub(x, mu)
    var = mean(mul(centred, centred), axis=2, keepdims=True)
    return _affine(div(centred, sqrt(add(var, eps))), gamma, beta)


__all__ = [name for name in dir() if not name.startswith("_") and name not in {"np", "annotations"}]
