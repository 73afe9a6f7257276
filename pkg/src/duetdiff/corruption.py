"""Token sequences and the two training-time corruptions.

``mask_forward`` is the diffusion forward process: every non-pad position
independently becomes the mask token with probability t. ``rtd_corrupt``
swaps a fixed count of unmasked tokens for plausible alternatives so a
detection head can be trained to spot them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RTD_MODES = ("argmax", "sample", "uniform")


@dataclass
class TokenSeq:
    """Integer token array with optional mask/pad special ids.

    Real tokens live in [0, n_real); ``mask_id`` and ``pad_id`` (when set)
    are expected to be n_real and n_real + 1. Pads may only form a
    contiguous suffix.
    """

    tokens: np.ndarray
    n_real: int
    mask_id: int | None = None
    pad_id: int | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise ValueError(f"TokenSeq: tokens must be 1-D, got {self.tokens.shape}")
        if self.pad_id is not None:
            pads = self.tokens == self.pad_id
            if pads.any():
                first = int(np.argmax(pads))
                if not pads[first:].all():
                    raise ValueError("TokenSeq: pads must form a contiguous suffix")

    def __len__(self):
        return len(self.tokens)

    def pad_mask(self):
        if self.pad_id is None:
            return np.zeros(len(self.tokens), dtype=bool)
        return self.tokens == self.pad_id

    def nonpad_length(self):
        return int((~self.pad_mask()).sum())

    def copy(self):
        return TokenSeq(self.tokens.copy(), self.n_real, self.mask_id, self.pad_id)

    def validate_clean(self):
        """Check that no specials appear in the non-pad region."""
        body = self.tokens[~self.pad_mask()]
        if body.size and (body.min() < 0 or body.max() >= self.n_real):
            raise ValueError(
                f"TokenSeq: clean tokens must lie in [0, {self.n_real}), "
                f"found range [{body.min()}, {body.max()}]"
            )


@dataclass
class CorruptionRecord:
    """A corrupted sequence plus what was done to it.

    ``rtd_labels[i]`` is True exactly when position i still holds its clean
    token; positions replaced by rtd corruption are False, masked positions
    are False, pads are True.
    """

    seq: TokenSeq
    mask_set: np.ndarray
    t: float
    rtd_set: np.ndarray = field(default=None)
    rtd_labels: np.ndarray = field(default=None)


def mask_forward(a0, t, rng):
    """Independently mask each non-pad token with probability t."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"mask_forward: t must be in (0, 1], got {t}")
    if a0.mask_id is None:
        raise ValueError("mask_forward: sequence has no mask id")
    a0.validate_clean()
    nonpad = ~a0.pad_mask()
    mask_set = (rng.random(len(a0)) < t) & nonpad
    out = a0.copy()
    out.tokens[mask_set] = a0.mask_id
    return CorruptionRecord(seq=out, mask_set=mask_set, t=t)


def rtd_corrupt(seq, rho, rng, mode="argmax", logits=None, temperature=1.0, clean=None):
    """Replace floor(rho * eligible) unmasked tokens with wrong alternatives.

    ``seq`` may already contain mask tokens; only non-pad, non-masked
    positions are eligible. Replacements come from the model's detached
    ``logits`` (argmax or temperature sample, the clean token excluded) or
    uniformly over the real vocabulary when no logits are given. The
    replacement never equals the clean token and is never a special.
    ``clean`` is the uncorrupted sequence, defaulting to ``seq`` itself.
    Returns (corrupted TokenSeq, rtd_set, rtd_labels).
    """
    if mode not in RTD_MODES:
        raise ValueError(f"rtd_corrupt: mode must be one of {RTD_MODES}, got {mode!r}")
    if clean is None:
        clean = seq
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rtd_corrupt: rho must be in [0, 1), got {rho}")
    tokens = seq.tokens
    eligible = ~seq.pad_mask()
    if seq.mask_id is not None:
        eligible &= tokens != seq.mask_id
    n_eligible = int(eligible.sum())
    n_replace = int(rho * n_eligible)
    if n_replace > n_eligible:
        raise ValueError(
            f"rtd_corrupt: cannot replace {n_replace} of {n_eligible} eligible tokens"
        )
    out = seq.copy()
    rtd_set = np.zeros(len(seq), dtype=bool)
    if n_replace > 0:
        idx = rng.choice(np.flatnonzero(eligible), size=n_replace, replace=False)
        rtd_set[idx] = True
        for i in idx:
            out.tokens[i] = _draw_replacement(
                int(clean.tokens[i]), seq.n_real, mode, logits, i, temperature, rng
            )
    rtd_labels = out.tokens == clean.tokens
    return out, rtd_set, rtd_labels


def _draw_replacement(clean_tok, n_real, mode, logits, pos, temperature, rng):
    if mode == "uniform" or logits is None:
        draw = int(rng.integers(n_real - 1))
        return draw + (draw >= clean_tok)
    row = np.asarray(logits[pos], dtype=np.float64)
    if row.shape != (n_real,):
        raise ValueError(
            f"rtd_corrupt: logits row must have shape ({n_real},), got {row.shape}"
        )
    if mode == "argmax":
        order = np.argsort(-row, kind="stable")
        pick = int(order[0])
        if pick == clean_tok:
            pick = int(order[1])
        return pick
    z = row / temperature
    z = z - z.max()
    p = np.exp(z)
    p[clean_tok] = 0.0
    p /= p.sum()
    return int(rng.choice(n_real, p=p))
