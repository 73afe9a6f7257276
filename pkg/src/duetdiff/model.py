"""Bidirectional transformer that predicts masked accompaniment tokens.

Pre-norm residual blocks with full self-attention over the prefix plus the
fused dual-track rows, learned absolute positions, and two heads sharing
the trunk: a token head over the real accompaniment vocabulary (specials
excluded) and a single-logit replaced-token-detection head. A causal
variant of the same parameters serves as the autoregressive baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .representation import (
    N_PREFIX,
    DualEmbedding,
    PrefixParams,
    build_input,
    build_prefix,
    embed_dual,
)

RTD_CLAMP = 30.0


@dataclass
class PredictorConfig:
    dim: int = 128
    layers: int = 4
    heads: int = 4
    ffn_mult: int = 2
    n_vocal: int = 16
    n_acc: int = 64
    n_styles: int = 4
    max_dual_len: int = 256
    single_stream: bool = False

    def __post_init__(self):
        if self.dim % 2 != 0:
            raise ValueError(f"PredictorConfig: dim must be even, got {self.dim}")
        if self.dim % self.heads != 0:
            raise ValueError(
                f"PredictorConfig: dim {self.dim} not divisible by heads {self.heads}"
            )

    @property
    def track_width(self):
        return self.dim if self.single_stream else self.dim // 2

    @property
    def max_rows(self):
        mult = 2 if self.single_stream else 1
        return N_PREFIX + mult * self.max_dual_len


@dataclass
class PredictorOutput:
    logits: tz.Tensor  # (B, T, n_acc)
    rtd_prob: tz.Tensor  # (B, T), strictly inside (0, 1)
    hidden: tz.Tensor  # (B, rows, dim)
    attn: list = field(default_factory=list)


def full_scale_config():
    """Shape-level preset mirroring the full-size system; not for allocation."""
    return PredictorConfig(
        dim=2048,
        layers=16,
        heads=16,
        ffn_mult=4,
        n_vocal=4096,
        n_acc=16384,
        max_dual_len=4096,
    )


class Predictor:
    """Owns the parameter store and runs the forward pass."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.params = {}
        rng = np.random.default_rng(seed)
        w = cfg.track_width
        d = cfg.dim
        f = cfg.dim * cfg.ffn_mult

        def param(name, shape, kind="normal"):
            if kind == "normal":
                data = rng.normal(0.0, 0.02, size=shape)
            elif kind == "zeros":
                data = np.zeros(shape)
            else:
                data = np.ones(shape)
            t = tz.Tensor(data, requires_grad=True, name=name)
            self.params[name] = t
            return t

        param("emb.voc", (cfg.n_vocal + 1, w))  # vocal ids + pad
        param("emb.acc", (cfg.n_acc + 2, w))  # acc ids + mask + pad
        param("prefix.style", (cfg.n_styles, d))
        param("prefix.null_style", (1, d))
        param("prefix.null_ref", (1, d))
        param("prefix.ref_w", (w, d))
        param("prefix.ref_b", (d,), "zeros")
        param("pos", (cfg.max_rows, d))
        for i in range(cfg.layers):
            p = f"block{i}."
            param(p + "ln1.g", (d,), "ones")
            param(p + "ln1.b", (d,), "zeros")
            param(p + "attn.w_qkv", (d, 3 * d))
            param(p + "attn.b_qkv", (3 * d,), "zeros")
            param(p + "attn.w_out", (d, d))
            param(p + "attn.b_out", (d,), "zeros")
            param(p + "ln2.g", (d,), "ones")
            param(p + "ln2.b", (d,), "zeros")
            param(p + "ffn.w1", (d, f))
            param(p + "ffn.b1", (f,), "zeros")
            param(p + "ffn.w2", (f, d))
            param(p + "ffn.b2", (d,), "zeros")
        param("final_ln.g", (d,), "ones")
        param("final_ln.b", (d,), "zeros")
        param("head.logit_w", (d, cfg.n_acc))
        param("head.logit_b", (cfg.n_acc,), "zeros")
        param("head.rtd_w", (d, 1))
        param("head.rtd_b", (1,), "zeros")

    # ------------------------------------------------------------- views

    def dual_embedding(self):
        return DualEmbedding(self.params["emb.voc"], self.params["emb.acc"])

    def prefix_params(self):
        return PrefixParams(
            style_table=self.params["prefix.style"],
            null_style=self.params["prefix.null_style"],
            null_ref=self.params["prefix.null_ref"],
            ref_w=self.params["prefix.ref_w"],
            ref_b=self.params["prefix.ref_b"],
        )

    def count_params(self):
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        return {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }

    # ----------------------------------------------------------- forward

    def trunk(self, x, causal=False, collect_attn=False):
        """Run the residual blocks; returns final-norm hidden and attention."""
        cfg = self.cfg
        pm = self.params
        b, rows, d = x.x.shape
        if rows > cfg.max_rows:
            raise ValueError(
                f"forward: {rows} rows exceed positional table {cfg.max_rows}"
            )
        pos = tz.slice_axis(pm["pos"], 0, x.pos_base, x.pos_base + rows)
        h = tz.add(x.x, tz.reshape(pos, (1, rows, d)))

        mask_add = None
        if causal:
            m = np.zeros((rows, rows))
            m[np.triu_indices(rows, k=1)] = -np.inf
            mask_add = m.reshape(1, 1, rows, rows)

        nh, dh = cfg.heads, d // cfg.heads
        attn_maps = []
        for i in range(cfg.layers):
            p = f"block{i}."
            a = tz.layernorm(h, pm[p + "ln1.g"], pm[p + "ln1.b"])
            qkv = tz.matmul(a, pm[p + "attn.w_qkv"]) + pm[p + "attn.b_qkv"]
            q = tz.slice_axis(qkv, -1, 0, d)
            k = tz.slice_axis(qkv, -1, d, 2 * d)
            v = tz.slice_axis(qkv, -1, 2 * d, 3 * d)
            q = tz.transpose(tz.reshape(q, (b, rows, nh, dh)), (0, 2, 1, 3))
            k = tz.transpose(tz.reshape(k, (b, rows, nh, dh)), (0, 2, 1, 3))
            v = tz.transpose(tz.reshape(v, (b, rows, nh, dh)), (0, 2, 1, 3))
            scores = tz.scale(tz.matmul(q, tz.transpose(k, (0, 1, 3, 2))), dh**-0.5)
            if mask_add is not None:
                scores = tz.add(scores, mask_add)
            probs = tz.softmax(scores, axis=-1)
            if collect_attn:
                attn_maps.append(probs.data)
            mix = tz.transpose(tz.matmul(probs, v), (0, 2, 1, 3))
            mix = tz.reshape(mix, (b, rows, d))
            h = tz.add(h, tz.matmul(mix, pm[p + "attn.w_out"]) + pm[p + "attn.b_out"])
            g = tz.layernorm(h, pm[p + "ln2.g"], pm[p + "ln2.b"])
            g = tz.gelu(tz.matmul(g, pm[p + "ffn.w1"]) + pm[p + "ffn.b1"])
            h = tz.add(h, tz.matmul(g, pm[p + "ffn.w2"]) + pm[p + "ffn.b2"])
        return tz.layernorm(h, pm["final_ln.g"], pm["final_ln.b"]), attn_maps

    def heads_at(self, hidden, start, length):
        """Apply the token and detection heads to a row range."""
        pm = self.params
        rows = tz.slice_axis(hidden, 1, start, start + length)
        logits = tz.matmul(rows, pm["head.logit_w"]) + pm["head.logit_b"]
        rtd = tz.matmul(rows, pm["head.rtd_w"]) + pm["head.rtd_b"]
        rtd = tz.sigmoid_clamped(rtd, RTD_CLAMP)
        rtd = tz.reshape(rtd, rtd.shape[:2])
        return logits, rtd


def forward(model, x, collect_attn=False):
    """Bidirectional pass; logits read at the dual-track (or acc) rows."""
    hidden, attn = model.trunk(x, causal=False, collect_attn=collect_attn)
    rows = hidden.shape[1]
    if model.cfg.single_stream:
        t = (rows - x.prefix_len) // 2
        start = x.prefix_len + t
    else:
        t = rows - x.prefix_len
        start = x.prefix_len
    logits, rtd = model.heads_at(hidden, start, t)
    return PredictorOutput(logits=logits, rtd_prob=rtd, hidden=hidden, attn=attn)


def ar_forward(model, x, collect_attn=False):
    """Causal pass: position i's logits depend only on rows before it.

    The readout is shifted one row left, so logits[i] is the next-token
    distribution for accompaniment position i given the prefix and dual
    rows strictly below i.
    """
    if model.cfg.single_stream:
        raise ValueError("ar_forward: causal decoding is defined for dual-track input")
    hidden, attn = model.trunk(x, causal=True, collect_attn=collect_attn)
    t = hidden.shape[1] - x.prefix_len
    logits, rtd = model.heads_at(hidden, x.prefix_len - 1, t)
    return PredictorOutput(logits=logits, rtd_prob=rtd, hidden=hidden, attn=attn)


def encode_tokens(model, voc_ids, acc_ids, conds, dropout_p=0.5, training=False, rng=None):
    """Condition prefix plus token rows, laid out for the model's stream mode.

    Dual-track fuses the two tracks feature-wise into one row per
    position; single-stream places full-width vocal rows ahead of the
    accompaniment rows instead.
    """
    prefix = build_prefix(
        model.prefix_params(),
        model.params["emb.acc"],
        conds,
        dropout_p=dropout_p,
        training=training,
        rng=rng,
    )
    if model.cfg.single_stream:
        voc_ids = np.atleast_2d(np.asarray(voc_ids, dtype=np.int64))
        acc_ids = np.atleast_2d(np.asarray(acc_ids, dtype=np.int64))
        if voc_ids.shape != acc_ids.shape:
            raise ValueError(
                f"encode_tokens: track shapes differ, {voc_ids.shape} vs {acc_ids.shape}"
            )
        voc_rows = tz.gather_rows(model.params["emb.voc"], voc_ids)
        acc_rows = tz.gather_rows(model.params["emb.acc"], acc_ids)
        body = tz.concat([voc_rows, acc_rows], axis=1)
    else:
        body = embed_dual(model.dual_embedding(), voc_ids, acc_ids)
    return build_input(prefix, body)


def count_params(cfg):
    """Exact parameter count for a config without allocating a model."""
    w, d, f = cfg.track_width, cfg.dim, cfg.dim * cfg.ffn_mult
    n = (cfg.n_vocal + 1) * w + (cfg.n_acc + 2) * w
    n += cfg.n_styles * d + 2 * d + w * d + d  # prefix rows and projection
    n += cfg.max_rows * d
    per_block = 4 * d  # two layernorms
    per_block += d * 3 * d + 3 * d + d * d + d  # attention
    per_block += d * f + f + f * d + d  # ffn
    n += cfg.layers * per_block
    n += 2 * d  # final norm
    n += d * cfg.n_acc + cfg.n_acc + d + 1  # heads
    return n
