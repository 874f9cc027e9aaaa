"""Differentiable primitives.

Broadcasting is supported for the elementwise arithmetic ops only; every
other op expects exact shapes.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_node(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return make_node(out, (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return make_node(a.data[idx].copy(), (a,), backward)


def pad_axis(a: Tensor, after: int, axis: int = -1) -> Tensor:
    """Zero-pad ``after`` entries at the end of ``axis``."""
    if after == 0:
        return a
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, after)
    n = a.shape[axis]

    def backward(g):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(0, n)
        return (g[tuple(idx)],)

    return make_node(np.pad(a.data, widths), (a,), backward)


def repeat(a: Tensor, repeats: int, axis: int = -1) -> Tensor:
    """Nearest-neighbour upsampling: each entry along ``axis`` repeated."""
    ax = axis % a.ndim
    shape = a.shape

    def backward(g):
        split = g.shape[:ax] + (shape[ax], repeats) + g.shape[ax + 1:]
        return (g.reshape(split).sum(axis=ax + 1),)

    return make_node(np.repeat(a.data, repeats, axis=ax), (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return make_node(x * s, (a,), lambda g: (g * (x * s * (1.0 - s) + s),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return make_node(e, (a,), lambda g: (g * e,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (a,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no rng is given (eval mode)."""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(a, keep)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization of a (batch, channels, length) tensor."""
    b, c, n = x.shape
    if c % groups:
        raise ConfigurationError(f"{c} channels not divisible into {groups} groups")
    xg = x.data.reshape(b, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(b, c, n)
    gd, bd = gamma.data.reshape(1, c, 1), beta.data.reshape(1, c, 1)
    count = xg.shape[-1]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2)).reshape(gamma.shape)
        gbeta = g.sum(axis=(0, 2)).reshape(beta.shape)
        dxhat = (g * gd).reshape(b, groups, -1)
        xh = xhat.reshape(b, groups, -1)
        dx = inv / count * (count * dxhat
                            - dxhat.sum(axis=-1, keepdims=True)
                            - xh * (dxhat * xh).sum(axis=-1, keepdims=True))
        return dx.reshape(b, c, n), ggamma, gbeta

    return make_node(xhat * gd + bd, (x, gamma, beta), backward)


def conv1d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """Zero-padded cross-correlation.

    ``x`` is (channels, length) or (batch, channels, length); ``w`` is
    (out_channels, in_channels, kernel).
    """
    if stride not in (1, 2):
        raise ConfigurationError(f"stride must be 1 or 2, got {stride}")
    if x.ndim == 2:
        out = conv1d(reshape(x, (1,) + x.shape), w, stride, pad, bias)
        return reshape(out, out.shape[1:])
    bsz, cin, length = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, kernel {w.shape}")
    lout = (length + 2 * pad - k) // stride + 1
    if lout < 1:
        raise DimensionError(f"conv1d output length {lout} < 1 for input {x.shape}, kernel {w.shape}, "
                             f"stride {stride}, pad {pad}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    wd = w.data
    span = stride * (lout - 1) + 1
    # all kernel taps in one batched GEMM, then shifted sums over taps
    taps = np.matmul(wd.transpose(2, 0, 1).reshape(k * cout, cin), xp)
    out = taps[:, 0:cout, 0:span:stride].copy()
    for j in range(1, k):
        out += taps[:, j * cout:(j + 1) * cout, j:j + span:stride]
    if bias is not None:
        out += bias.data.reshape(1, cout, 1)

    def backward(g):
        gw = np.empty_like(wd)
        for j in range(k):
            gw[:, :, j] = np.tensordot(g, xp[:, :, j:j + span:stride], axes=([0, 2], [0, 2]))
        back = np.matmul(wd.transpose(2, 1, 0).reshape(k * cin, cout), g)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + span:stride] += back[:, j * cin:(j + 1) * cin, :]
        gx = gxp[:, :, pad:pad + length] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)).reshape(bias.shape))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return make_node(out, parents, backward)


def self_attention(x: Tensor, num_heads: int, w_qkv) -> Tensor:
    """Multi-head scaled dot-product self-attention over the length axis.

    ``x`` is (length, d) or (batch, length, d).  ``w_qkv`` is a ParameterSet
    (or mapping) with ``qkv`` of shape (d, 3d) and ``proj`` of shape (d, d);
    optional ``qkv_bias`` (3d,) and ``proj_bias`` (d,).
    """
    if x.ndim == 2:
        out = self_attention(reshape(x, (1,) + x.shape), num_heads, w_qkv)
        return reshape(out, out.shape[1:])
    bsz, length, d = x.shape
    if num_heads < 1 or d % num_heads:
        raise ConfigurationError(f"feature dim {d} is not divisible by num_heads={num_heads}")
    hd = d // num_heads
    bias = w_qkv["qkv_bias"] if "qkv_bias" in w_qkv else None
    qkv = linear(x, w_qkv["qkv"], bias)
    # (batch, length, 3, heads, hd) -> (3, batch, heads, length, hd)
    qkv = transpose(reshape(qkv, (bsz, length, 3, num_heads, hd)), (2, 0, 3, 1, 4))
    q = reshape(slice_axis(qkv, 0, 1, axis=0), (bsz, num_heads, length, hd))
    k = reshape(slice_axis(qkv, 1, 2, axis=0), (bsz, num_heads, length, hd))
    v = reshape(slice_axis(qkv, 2, 3, axis=0), (bsz, num_heads, length, hd))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    attn = softmax(scores, axis=-1)
    heads = matmul(attn, v)
    merged = reshape(transpose(heads, (0, 2, 1, 3)), (bsz, length, d))
    pbias = w_qkv["proj_bias"] if "proj_bias" in w_qkv else None
    return linear(merged, w_qkv["proj"], pbias)


def mse(pred: Tensor, target) -> Tensor:
    """Mean over every element of the squared difference."""
    return mean(square(sub(pred, target)))
