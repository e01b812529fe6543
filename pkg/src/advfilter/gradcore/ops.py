"""Differentiable forward ops.

Elementwise ops broadcast with numpy rules; the backward pass sums the
gradient back down to each operand's shape.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from advfilter.errors import DimensionError, DomainError
from advfilter.gradcore.tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, parents=(a, b), backward=back, op="add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, parents=(a, b), backward=back, op="sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, parents=(a, b), backward=back, op="mul")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return Tensor(x.data * c, parents=(x,), backward=lambda g: (g * c,), op="scale")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting; both operands need ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(a.data @ b.data, parents=(a, b), backward=back, op="matmul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(x.data * mask, parents=(x,), backward=lambda g: (g * mask,), op="relu")


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg = x.data <= 0
    expm = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(neg, alpha * expm, x.data)
    deriv = np.where(neg, alpha * expm + alpha, 1.0)
    return Tensor(out, parents=(x,), backward=lambda g: (g * deriv,), op="elu")


def square(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.data * x.data, parents=(x,), backward=lambda g: (2.0 * g * x.data,), op="square")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError(f"log of non-positive value (min {x.data.min():.3g})")
    return Tensor(np.log(x.data), parents=(x,), backward=lambda g: (g / x.data,), op="log")


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor(out, parents=(x,), backward=back, op="sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return Tensor(out, parents=(x,), backward=back, op="mean")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return Tensor(out, parents=(x,), backward=lambda g: (g.reshape(x.shape),), op="reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor(np.transpose(x.data, axes), parents=(x,),
                  backward=lambda g: (np.transpose(g, inverse),), op="transpose")


def flatten(x) -> Tensor:
    """Collapse every axis but the first (batch) axis."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, k, bias=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation.

    x: (B, Cin, H, W); k: (Cout, Cin // groups, kh, kw); bias: (Cout,).
    ``padding`` is an int, a pair, or ``"same"`` (stride 1 only, extra
    padding goes after).
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {k.shape}")
    B, cin, H, W = x.shape
    cout, cg, kh, kw = k.shape
    if groups < 1 or cin % groups or cout % groups:
        raise DimensionError(f"conv2d: groups={groups} does not divide channels of {x.shape} and {k.shape}")
    if cin // groups != cg:
        raise DimensionError(f"conv2d: kernel {k.shape} expects {cg * groups} input channels, input is {x.shape}")
    sh, sw = _pair(stride)
    if padding == "same":
        if (sh, sw) != (1, 1):
            raise DimensionError("conv2d: 'same' padding requires stride 1")
        pads = ((kh - 1) // 2, kh - 1 - (kh - 1) // 2, (kw - 1) // 2, kw - 1 - (kw - 1) // 2)
    else:
        ph, pw = _pair(padding)
        pads = (ph, ph, pw, pw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pads[0], pads[1]), (pads[2], pads[3])))
    Hp, Wp = xp.shape[2], xp.shape[3]
    if Hp < kh or Wp < kw:
        raise DimensionError(f"conv2d: kernel {k.shape} larger than padded input {xp.shape}")
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1
    G, og = groups, cout // groups

    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    cols = (
        win.reshape(B, G, cg, Ho, Wo, kh, kw)
        .transpose(1, 0, 3, 4, 2, 5, 6)
        .reshape(G, B * Ho * Wo, cg * kh * kw)
    )
    kmat = k.data.reshape(G, og, cg * kh * kw).transpose(0, 2, 1)
    out = (cols @ kmat).reshape(G, B, Ho, Wo, og).transpose(1, 0, 4, 2, 3).reshape(B, cout, Ho, Wo)
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {b.shape} does not match {cout} output channels")
        out = out + b.data[None, :, None, None]

    def back(g):
        gm = g.reshape(B, G, og, Ho, Wo).transpose(1, 0, 3, 4, 2).reshape(G, B * Ho * Wo, og)
        gk = None
        if k.requires_grad:
            gk = (np.swapaxes(cols, 1, 2) @ gm).transpose(0, 2, 1).reshape(k.shape)
        gx = None
        if x.requires_grad:
            dcols = (gm @ np.swapaxes(kmat, 1, 2)).reshape(G, B, Ho, Wo, cg, kh, kw)
            dcols = dcols.transpose(1, 0, 4, 2, 3, 5, 6)
            dxp = np.zeros((B, G, cg, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] += dcols[..., i, j]
            dxp = dxp.reshape(B, cin, Hp, Wp)
            gx = dxp[:, :, pads[0] : pads[0] + H, pads[2] : pads[2] + W]
            gx = np.ascontiguousarray(gx)
        grads = [gx, gk]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, k) if b is None else (x, k, b)
    return Tensor(out, parents=parents, backward=back, op="conv2d")


def avg_pool(x, window) -> Tensor:
    """Non-overlapping average pooling over the last two axes of a 4-D input.

    Trailing rows/columns that do not fill a whole window are dropped.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"avg_pool: expected 4-D input, got {x.shape}")
    ph, pw = _pair(window)
    B, C, H, W = x.shape
    Ho, Wo = H // ph, W // pw
    if Ho == 0 or Wo == 0:
        raise DimensionError(f"avg_pool: window {(ph, pw)} larger than input {x.shape}")
    out = x.data[:, :, : Ho * ph, : Wo * pw].reshape(B, C, Ho, ph, Wo, pw).mean(axis=(3, 5))

    def back(g):
        gx = np.zeros(x.shape)
        spread = np.repeat(np.repeat(g, ph, axis=2), pw, axis=3) / (ph * pw)
        gx[:, :, : Ho * ph, : Wo * pw] = spread
        return (gx,)

    return Tensor(out, parents=(x,), backward=back, op="avg_pool")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no graph)."""
    return np.exp(_log_softmax(np.asarray(z, dtype=np.float64)))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of (B, K) logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    K = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DimensionError(f"softmax_cross_entropy: label outside [0, {K})")
    n = labels.shape[0]
    logp = _log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return Tensor(loss, parents=(logits,), backward=back, op="softmax_cross_entropy")


def mse(a, b) -> Tensor:
    """Mean of squared elementwise differences; shapes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size

    def back(g):
        gd = (2.0 / n) * g * diff
        return gd, -gd

    return Tensor(np.mean(diff * diff), parents=(a, b), backward=back, op="mse")
