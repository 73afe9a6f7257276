"""Dual-track embedding and the learned condition prefix.

The two aligned tracks are embedded with separate tables of width D/2 and
fused by feature concatenation, so every sequence row carries its vocal
token and its (possibly masked) accompaniment token side by side. Two
learned prefix rows - style and reference - are prepended; during training
each is independently replaced by a learned null embedding with the
classifier-free dropout probability, and at inference absent conditions map
to the same nulls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz

N_PREFIX = 2  # style row + reference row


@dataclass
class DualEmbedding:
    """Per-track embedding tables, each D/2 wide."""

    voc_table: tz.Tensor
    acc_table: tz.Tensor


@dataclass
class PrefixParams:
    style_table: tz.Tensor  # (n_styles, D)
    null_style: tz.Tensor  # (1, D)
    null_ref: tz.Tensor  # (1, D)
    ref_w: tz.Tensor  # (D/2, D) projection of the pooled reference
    ref_b: tz.Tensor  # (D,)


@dataclass
class Condition:
    """Conditioning for one item; None fields mean the condition is absent."""

    style_id: int | None = None
    reference: np.ndarray | None = None  # accompaniment token ids


@dataclass
class ConditionPrefix:
    rows: tz.Tensor  # (B, N_PREFIX, D)
    dropped: np.ndarray  # (B, N_PREFIX) bool, True where the null row is used


@dataclass
class ModelInput:
    x: tz.Tensor  # (B, prefix_len + T, D)
    prefix_len: int
    pad_mask: np.ndarray  # (B, prefix_len + T) bool, True at pad rows
    pos_base: int = 0


def embed_dual(emb, voc_ids, acc_ids):
    """Fuse aligned tracks by feature concatenation: (B, T, D)."""
    voc_ids = np.atleast_2d(np.asarray(voc_ids, dtype=np.int64))
    acc_ids = np.atleast_2d(np.asarray(acc_ids, dtype=np.int64))
    if voc_ids.shape != acc_ids.shape:
        raise ValueError(
            f"embed_dual: track shapes differ, {voc_ids.shape} vs {acc_ids.shape}"
        )
    ev = tz.gather_rows(emb.voc_table, voc_ids)
    ea = tz.gather_rows(emb.acc_table, acc_ids)
    return tz.concat([ev, ea], axis=-1)


def pooled_reference(pp, acc_table, snippets):
    """Mean-pool snippet embeddings and project to full width: (B, 1, D)."""
    snippets = np.atleast_2d(np.asarray(snippets, dtype=np.int64))
    pooled = tz.mean_axis(tz.gather_rows(acc_table, snippets), axis=1)
    row = tz.matmul(pooled, pp.ref_w) + pp.ref_b
    return tz.reshape(row, (snippets.shape[0], 1, row.shape[-1]))


def build_prefix(pp, acc_table, conditions, dropout_p=0.5, training=False, rng=None):
    """Assemble the (B, 2, D) condition prefix.

    During training each row is independently nulled with probability
    ``dropout_p``; at inference only absent conditions become nulls.
    """
    if training and rng is None:
        raise ValueError("build_prefix: training-mode dropout needs an rng")
    n = len(conditions)
    d = pp.style_table.shape[1]

    style_ids = np.zeros(n, dtype=np.int64)
    dropped = np.zeros((n, N_PREFIX), dtype=bool)
    snip_len = max(
        (len(c.reference) for c in conditions if c.reference is not None), default=1
    )
    snippets = np.zeros((n, snip_len), dtype=np.int64)
    for b, cond in enumerate(conditions):
        if cond.style_id is None:
            dropped[b, 0] = True
        else:
            style_ids[b] = cond.style_id
        if cond.reference is None:
            dropped[b, 1] = True
        else:
            snippets[b, : len(cond.reference)] = cond.reference
    if training:
        dropped |= rng.random((n, N_PREFIX)) < dropout_p

    style_rows = tz.reshape(tz.gather_rows(pp.style_table, style_ids), (n, 1, d))
    ref_rows = pooled_reference(pp, acc_table, snippets)

    keep = (~dropped).astype(np.float64)
    style_rows = tz.add(
        tz.mul(style_rows, keep[:, 0].reshape(n, 1, 1)),
        tz.mul(tz.reshape(pp.null_style, (1, 1, d)), dropped[:, 0].astype(np.float64).reshape(n, 1, 1)),
    )
    ref_rows = tz.add(
        tz.mul(ref_rows, keep[:, 1].reshape(n, 1, 1)),
        tz.mul(tz.reshape(pp.null_ref, (1, 1, d)), dropped[:, 1].astype(np.float64).reshape(n, 1, 1)),
    )
    return ConditionPrefix(rows=tz.concat([style_rows, ref_rows], axis=1), dropped=dropped)


def build_input(prefix, dual, pad_mask=None):
    """Prepend the prefix rows to the fused tracks: (B, P + T, D)."""
    b, t = dual.shape[0], dual.shape[1]
    if prefix.rows.shape[0] != b:
        raise ValueError(
            f"build_input: batch mismatch, prefix {prefix.rows.shape[0]} vs dual {b}"
        )
    if pad_mask is None:
        pad_mask = np.zeros((b, t), dtype=bool)
    full_pad = np.concatenate([np.zeros((b, N_PREFIX), dtype=bool), pad_mask], axis=1)
    x = tz.concat([prefix.rows, dual], axis=1)
    return ModelInput(x=x, prefix_len=N_PREFIX, pad_mask=full_pad)
