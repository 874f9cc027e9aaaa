"""Parameterised building blocks.  Each block registers its tensors in a
shared ParameterSet under a dotted prefix and applies them functionally."""

from __future__ import annotations

import math

import numpy as np

from .. import numcore as nc
from ..numcore import ParameterSet, Tensor
from ..numcore import init


def norm_groups(channels: int) -> int:
    if channels % 8 == 0:
        return 8
    return channels if channels < 8 else math.gcd(channels, 8)


class Dense:
    def __init__(self, params: ParameterSet, name: str, n_in: int, n_out: int, rng, zero: bool = False):
        w, b = init.dense(rng, n_in, n_out, zero)
        self.w = params.add(f"{name}.w", w)
        self.b = params.add(f"{name}.b", b)

    def __call__(self, x: Tensor) -> Tensor:
        return nc.linear(x, self.w, self.b)


class MLPTrunk:
    """``Linear`` followed by ``n_layers - 1`` (SiLU, Linear) pairs."""

    def __init__(self, params, name, n_in, hidden, n_layers, rng, dropout=0.0, n_out=None, zero_last=False):
        n_layers = max(int(n_layers), 1)
        n_out = hidden if n_out is None else n_out
        dims = [n_in] + [hidden] * (n_layers - 1) + [n_out]
        self.layers = [Dense(params, f"{name}.{i}", dims[i], dims[i + 1], rng,
                             zero=zero_last and i == n_layers - 1) for i in range(n_layers)]
        self.dropout = dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i:
                x = nc.dropout(nc.silu(x), self.dropout, rng)
            x = layer(x)
        return x


class Conv:
    def __init__(self, params, name, c_in, c_out, k, rng, stride=1, zero=False):
        w, b = init.conv(rng, c_in, c_out, k, zero)
        self.w = params.add(f"{name}.w", w)
        self.b = params.add(f"{name}.b", b)
        self.stride, self.pad = stride, k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return nc.conv1d(x, self.w, self.stride, self.pad, bias=self.b)


class GroupNorm:
    def __init__(self, params, name, channels):
        self.gamma = params.add(f"{name}.gamma", np.ones(channels))
        self.beta = params.add(f"{name}.beta", np.zeros(channels))
        self.groups = norm_groups(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return nc.group_norm(x, self.gamma, self.beta, self.groups)


class ResBlock:
    """Norm-SiLU-conv twice, with the embedding injected between the convs.

    With ``scale_shift`` the embedding modulates the second norm as
    ``norm(h) * (1 + scale) + shift``; otherwise it is added before that norm.
    """

    def __init__(self, params, name, c_in, c_out, emb_dim, rng, dropout=0.0, scale_shift=False):
        self.norm1 = GroupNorm(params, f"{name}.norm1", c_in)
        self.conv1 = Conv(params, f"{name}.conv1", c_in, c_out, 3, rng)
        self.scale_shift = scale_shift
        self.emb = Dense(params, f"{name}.emb", emb_dim, 2 * c_out if scale_shift else c_out, rng)
        self.norm2 = GroupNorm(params, f"{name}.norm2", c_out)
        self.conv2 = Conv(params, f"{name}.conv2", c_out, c_out, 3, rng)
        self.skip = Conv(params, f"{name}.skip", c_in, c_out, 1, rng) if c_in != c_out else None
        self.dropout = dropout

    def __call__(self, x: Tensor, emb: Tensor, rng=None) -> Tensor:
        h = self.conv1(nc.silu(self.norm1(x)))
        e = self.emb(nc.silu(emb))
        e = nc.reshape(e, e.shape + (1,))
        if self.scale_shift:
            c = e.shape[1] // 2
            scale, shift = nc.slice_axis(e, 0, c, axis=1), nc.slice_axis(e, c, 2 * c, axis=1)
            h = nc.add(nc.mul(self.norm2(h), nc.add(scale, 1.0)), shift)
        else:
            h = self.norm2(nc.add(h, e))
        h = self.conv2(nc.dropout(nc.silu(h), self.dropout, rng))
        return nc.add(x if self.skip is None else self.skip(x), h)


class AttentionBlock:
    def __init__(self, params, name, channels, num_heads, rng):
        self.norm = GroupNorm(params, f"{name}.norm", channels)
        self.weights = ParameterSet()
        for key, (n_in, n_out) in {"qkv": (channels, 3 * channels), "proj": (channels, channels)}.items():
            w, b = init.dense(rng, n_in, n_out)
            self.weights._tensors[key] = params.add(f"{name}.{key}", w)
            self.weights._tensors[f"{key}_bias"] = params.add(f"{name}.{key}_bias", b)
        self.num_heads = num_heads

    def __call__(self, x: Tensor) -> Tensor:
        h = nc.transpose(self.norm(x), (0, 2, 1))
        h = nc.self_attention(h, self.num_heads, self.weights)
        return nc.add(x, nc.transpose(h, (0, 2, 1)))


class Downsample:
    def __init__(self, params, name, channels, rng, use_conv: bool):
        self.conv = Conv(params, f"{name}.conv", channels, channels, 3, rng, stride=2) if use_conv else None

    def __call__(self, x: Tensor) -> Tensor:
        if self.conv is not None:
            return self.conv(x)
        b, c, n = x.shape
        return nc.mean(nc.reshape(x, (b, c, n // 2, 2)), axis=3)


class Upsample:
    def __init__(self, params, name, channels, rng, use_conv: bool):
        self.conv = Conv(params, f"{name}.conv", channels, channels, 3, rng) if use_conv else None

    def __call__(self, x: Tensor) -> Tensor:
        x = nc.repeat(x, 2, axis=-1)
        return x if self.conv is None else self.conv(x)
