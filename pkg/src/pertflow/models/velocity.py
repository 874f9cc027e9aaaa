"""Velocity-field parameterisations: an MLP and a 1-D U-Net over genes.

Both map ``(x_t, encoded condition, t)`` to a velocity with the shape of
``x_t``.  Time enters through a sinusoidal encoding of ``time_scale * t``.
"""

from __future__ import annotations

import numpy as np

from .. import numcore as nc
from ..encoding import GeneEmbeddingTable, SinusoidalEncoder, encode_state
from ..errors import ConfigurationError, DimensionError
from ..numcore import ParameterSet, Tensor
from .layers import AttentionBlock, Conv, Downsample, GroupNorm, MLPTrunk, ResBlock, Upsample

TIME_SCALE = 1000.0


class VelocityField:
    kind = "base"

    def __init__(self, state_dim: int, cond_dim: int):
        self.state_dim = state_dim
        self.cond_dim = cond_dim
        self.params = ParameterSet()

    def config(self) -> dict:
        raise NotImplementedError

    def forward(self, x_t, cond, t, rng=None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x_t, cond, t, rng=None) -> Tensor:
        return self.forward(x_t, cond, t, rng)

    def _check(self, x_t, cond, t):
        x_t = nc.as_tensor(x_t)
        cond = np.asarray(cond, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if x_t.ndim != 2 or x_t.shape[1] != self.state_dim:
            raise DimensionError(f"x_t has shape {x_t.shape}, expected (batch, {self.state_dim})")
        b = x_t.shape[0]
        if cond.shape != (b, self.cond_dim):
            raise DimensionError(f"condition batch has shape {cond.shape}, expected ({b}, {self.cond_dim})")
        if t.shape != (b,):
            raise DimensionError(f"time batch has shape {t.shape}, expected ({b},)")
        return x_t, cond, t


def velocity_forward(model: VelocityField, x_t, c, t, rng=None) -> Tensor:
    return model.forward(x_t, c, t, rng)


class MLPVelocityField(VelocityField):
    """Separate trunks for expression, condition and time, fused by summation.

    The expression trunk consumes the raw state vector (genes or PCA
    coordinates); the decoder's last layer starts at zero.
    """

    kind = "mlp"

    def __init__(self, state_dim, cond_dim, hidden_dim=256, n_layers_gene_expression=2, n_layers_conditions=2,
                 n_layers_time=2, n_layers_decoding=2, dropout=0.0, time_dim=32, seed=0):
        super().__init__(state_dim, cond_dim)
        rng = np.random.default_rng(seed)
        self.hparams = dict(state_dim=state_dim, cond_dim=cond_dim, hidden_dim=hidden_dim,
                            n_layers_gene_expression=n_layers_gene_expression,
                            n_layers_conditions=n_layers_conditions, n_layers_time=n_layers_time,
                            n_layers_decoding=n_layers_decoding, dropout=dropout, time_dim=time_dim, seed=seed)
        self.time_enc = SinusoidalEncoder(time_dim)
        p = self.params
        self.x_trunk = MLPTrunk(p, "x_trunk", state_dim, hidden_dim, n_layers_gene_expression, rng, dropout)
        self.c_trunk = MLPTrunk(p, "c_trunk", cond_dim, hidden_dim, n_layers_conditions, rng, dropout)
        self.t_trunk = MLPTrunk(p, "t_trunk", time_dim, hidden_dim, n_layers_time, rng, dropout)
        self.decoder = MLPTrunk(p, "decoder", hidden_dim, hidden_dim, n_layers_decoding, rng, dropout,
                                n_out=state_dim, zero_last=True)

    def config(self) -> dict:
        return {"kind": self.kind, **self.hparams}

    def forward(self, x_t, cond, t, rng=None) -> Tensor:
        x_t, cond, t = self._check(x_t, cond, t)
        h = nc.add(nc.add(self.x_trunk(x_t, rng), self.c_trunk(nc.Tensor(cond), rng)),
                   self.t_trunk(nc.Tensor(self.time_enc(TIME_SCALE * t)), rng))
        return self.decoder(nc.silu(h), rng)


def unet_pad(x, levels: int):
    """Zero-pad the last (gene) axis to a multiple of ``2**(levels - 1)``.

    Accepts an array or Tensor; returns ``(padded, pad_record)``.
    """
    if levels < 1:
        raise ConfigurationError(f"levels must be >= 1, got {levels}")
    t = nc.as_tensor(x)
    m = t.shape[-1]
    mult = 2 ** (levels - 1)
    target = -(-m // mult) * mult
    padded = nc.pad_axis(t, target - m, axis=-1)
    if not isinstance(x, Tensor):
        padded = padded.data
    return padded, {"length": m, "padded": target}


def unet_unpad(x, record: dict):
    if isinstance(x, Tensor):
        return nc.slice_axis(x, 0, record["length"], axis=-1)
    return np.asarray(x)[..., :record["length"]]


class UNetVelocityField(VelocityField):
    """1-D U-Net over the gene axis.

    Genes are the sequence positions; features per gene start as
    ``Enc(x_t) + Emb(gene)`` passed through a small MLP.  The time and
    condition trunks are concatenated into one embedding that every residual
    block adds after its first convolution.  ``attention_resolutions`` lists
    downsampling factors (1, 2, 4, ...) at which self-attention is applied.
    """

    kind = "unet"

    def __init__(self, genes, cond_dim, hidden_dim=32, channel_mult=(1, 2, 2), num_res_blocks=1,
                 attention_resolutions=(4,), num_heads=4, conv_resample=True, dropout=0.0, enc_dim=16,
                 time_dim=32, n_layers_gene_expression=2, n_layers_conditions=2, n_layers_time=2,
                 use_scale_shift_norm=False, seed=0):
        genes = list(genes)
        super().__init__(len(genes), cond_dim)
        rng = np.random.default_rng(seed)
        channel_mult = [int(c) for c in channel_mult]
        attention_resolutions = [int(a) for a in attention_resolutions]
        self.hparams = dict(genes=genes, cond_dim=cond_dim, hidden_dim=hidden_dim, channel_mult=channel_mult,
                            num_res_blocks=num_res_blocks, attention_resolutions=attention_resolutions,
                            num_heads=num_heads, conv_resample=conv_resample, dropout=dropout, enc_dim=enc_dim,
                            time_dim=time_dim, n_layers_gene_expression=n_layers_gene_expression,
                            n_layers_conditions=n_layers_conditions, n_layers_time=n_layers_time,
                            use_scale_shift_norm=use_scale_shift_norm, seed=seed)
        for mult in channel_mult:
            if (hidden_dim * mult) % num_heads:
                raise ConfigurationError(f"channels {hidden_dim * mult} not divisible by num_heads={num_heads}")
        self.levels = len(channel_mult)
        self.dropout = dropout
        self.value_enc = SinusoidalEncoder(enc_dim)
        self.time_enc = SinusoidalEncoder(time_dim)
        p = self.params
        H = hidden_dim
        self.embedding = GeneEmbeddingTable(genes, enc_dim, p, rng)
        self.x_trunk = MLPTrunk(p, "x_trunk", enc_dim, H, n_layers_gene_expression, rng)
        self.t_trunk = MLPTrunk(p, "t_trunk", time_dim, H, n_layers_time, rng)
        self.c_trunk = MLPTrunk(p, "c_trunk", cond_dim, H, n_layers_conditions, rng)
        emb_dim = 2 * H

        ch = H * channel_mult[0]
        self.conv_in = Conv(p, "conv_in", H, ch, 3, rng)
        self.down = []
        skips = [ch]
        ds = 1
        for level, mult in enumerate(channel_mult):
            for i in range(num_res_blocks):
                out = H * mult
                blk = [ResBlock(p, f"down.{level}.{i}.res", ch, out, emb_dim, rng, dropout, use_scale_shift_norm)]
                ch = out
                if ds in attention_resolutions:
                    blk.append(AttentionBlock(p, f"down.{level}.{i}.attn", ch, num_heads, rng))
                self.down.append(blk)
                skips.append(ch)
            if level != len(channel_mult) - 1:
                self.down.append([Downsample(p, f"down.{level}.sample", ch, rng, conv_resample)])
                skips.append(ch)
                ds *= 2
        self.mid = [ResBlock(p, "mid.res0", ch, ch, emb_dim, rng, dropout, use_scale_shift_norm),
                    AttentionBlock(p, "mid.attn", ch, num_heads, rng),
                    ResBlock(p, "mid.res1", ch, ch, emb_dim, rng, dropout, use_scale_shift_norm)]
        self.up = []
        for level, mult in reversed(list(enumerate(channel_mult))):
            for i in range(num_res_blocks + 1):
                out = H * mult
                blk = [ResBlock(p, f"up.{level}.{i}.res", ch + skips.pop(), out, emb_dim, rng, dropout, use_scale_shift_norm)]
                ch = out
                if ds in attention_resolutions:
                    blk.append(AttentionBlock(p, f"up.{level}.{i}.attn", ch, num_heads, rng))
                if level and i == num_res_blocks:
                    blk.append(Upsample(p, f"up.{level}.sample", ch, rng, conv_resample))
                    ds //= 2
                self.up.append(blk)
        self.norm_out = GroupNorm(p, "out.norm", ch)
        self.conv_out = Conv(p, "out.conv", ch, 1, 3, rng, zero=True)

    def config(self) -> dict:
        return {"kind": self.kind, **self.hparams}

    def _apply(self, blk, h, emb, rng):
        for layer in blk:
            h = layer(h, emb, rng) if isinstance(layer, ResBlock) else layer(h)
        return h

    def forward(self, x_t, cond, t, rng=None) -> Tensor:
        x_t, cond, t = self._check(x_t, cond, t)
        b = x_t.shape[0]
        feats = self.x_trunk(encode_state(x_t, self.value_enc, self.embedding))      # (b, m, H)
        h, record = unet_pad(nc.transpose(feats, (0, 2, 1)), self.levels)            # (b, H, L)
        emb = nc.concat([self.t_trunk(nc.Tensor(self.time_enc(TIME_SCALE * t))),
                         self.c_trunk(nc.Tensor(cond))], axis=1)
        h = self.conv_in(h)
        hs = [h]
        for blk in self.down:
            h = self._apply(blk, h, emb, rng)
            hs.append(h)
        h = self._apply(self.mid, h, emb, rng)
        for blk in self.up:
            h = self._apply(blk, nc.concat([h, hs.pop()], axis=1), emb, rng)
        out = self.conv_out(nc.silu(self.norm_out(h)))                               # (b, 1, L)
        return nc.reshape(unet_unpad(out, record), (b, self.state_dim))


def build_field(config: dict) -> VelocityField:
    cfg = dict(config)
    kind = cfg.pop("kind")
    if kind == "mlp":
        return MLPVelocityField(**cfg)
    if kind == "unet":
        return UNetVelocityField(**cfg)
    raise ConfigurationError(f"unknown velocity field kind {kind!r}")
