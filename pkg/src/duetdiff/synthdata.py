"""Synthetic vocal/accompaniment token pairs with an exactly known grammar.

A vocal track is a random walk of pitch tokens broken by rest spans. The
accompaniment answers every vocal token deterministically given a hidden
style id: pitched vocals map to one of 48 harmony tokens (12 chord classes
by 4 metric phases), rests map to one of 4 ostinato tokens. Because the
grammar is invertible, generation quality reduces to exact token checks,
and the style can be decoded back out of any produced accompaniment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corruption import TokenSeq

# Accompaniment vocabulary layout.
ACC_REST = 0
HARMONY_LO, HARMONY_HI = 1, 48  # inclusive; 12 chord classes x 4 phases
OSTINATO_LO, OSTINATO_HI = 49, 52  # inclusive; one token per (style+i) mod 4
N_CHORD_CLASSES = 12
N_PHASES = 4


@dataclass
class SynthConfig:
    n_vocal: int = 16  # vocal ids: 0 rest, 1..15 pitch
    n_acc: int = 64  # real accompaniment ids 0..63
    n_styles: int = 4
    epsilon: float = 0.0  # per-position label-noise probability
    rest_len: tuple = (4, 8)  # inclusive span-length range for rests
    segment_len: tuple = (8, 16)  # inclusive melody-segment length range
    walk_step: int = 2  # melody moves by a uniform step in [-s, s]

    @property
    def mask_id(self):
        return self.n_acc

    @property
    def pad_id(self):
        return self.n_acc + 1

    @property
    def vocal_pad_id(self):
        return self.n_vocal


@dataclass
class SynthInstance:
    style: int
    vocals: np.ndarray
    accomp: np.ndarray
    events: list = field(default_factory=list)
    rest_spans: list = field(default_factory=list)
    seed: int = 0

    def vocal_seq(self, cfg):
        return TokenSeq(self.vocals, cfg.n_vocal, mask_id=None, pad_id=cfg.vocal_pad_id)

    def accomp_seq(self, cfg):
        return TokenSeq(self.accomp, cfg.n_acc, mask_id=cfg.mask_id, pad_id=cfg.pad_id)


def grammar_token(v, style, i):
    """The noise-free accompaniment token for vocal v at position i."""
    if v != 0:
        return 1 + ((v - 1 + 3 * style) % N_CHORD_CLASSES) + N_CHORD_CLASSES * (i % N_PHASES)
    return OSTINATO_LO + ((style + i) % N_PHASES)


def category_tokens(v, i):
    """All tokens the grammar could place at position i for any style/noise."""
    if v != 0:
        base = 1 + N_CHORD_CLASSES * (i % N_PHASES)
        return np.arange(base, base + N_CHORD_CLASSES)
    return np.arange(OSTINATO_LO, OSTINATO_HI + 1)


def invert_style(v, a, i):
    """Recover the style id from one (vocal, accompaniment) pair, or None.

    Returns None when the token is not a grammar-consistent output for
    this vocal token and position.
    """
    if v != 0:
        if not HARMONY_LO <= a <= HARMONY_HI:
            return None
        if (a - 1) // N_CHORD_CLASSES != i % N_PHASES:
            return None
        diff = ((a - 1) % N_CHORD_CLASSES - (v - 1)) % N_CHORD_CLASSES
        if diff % 3 != 0:
            return None
        return diff // 3
    if not OSTINATO_LO <= a <= OSTINATO_HI:
        return None
    return (a - OSTINATO_LO - i) % N_PHASES


def harmony_onsets(accomp):
    """Positions where the track transitions into a harmony token."""
    a = np.asarray(accomp)
    is_h = (a >= HARMONY_LO) & (a <= HARMONY_HI)
    prev = np.concatenate(([False], is_h[:-1]))
    return list(np.flatnonzero(is_h & ~prev))


def rest_spans_of(vocals):
    """Runs of vocal rests as (start, length) pairs."""
    v = np.asarray(vocals)
    spans = []
    i = 0
    while i < len(v):
        if v[i] == 0:
            j = i
            while j < len(v) and v[j] == 0:
                j += 1
            spans.append((i, j - i))
            i = j
        else:
            i += 1
    return spans


def gen_pair(style, length, cfg, rng, seed=0):
    """Generate one aligned vocal/accompaniment pair of the given length."""
    if not 0 <= style < cfg.n_styles:
        raise ValueError(f"gen_pair: style must be in [0, {cfg.n_styles}), got {style}")
    if length < 1:
        raise ValueError(f"gen_pair: length must be >= 1, got {length}")
    vocals = np.empty(length, dtype=np.int64)
    pos = 0
    resting = True
    while pos < length:
        if resting:
            span = int(rng.integers(cfg.rest_len[0], cfg.rest_len[1] + 1))
            end = min(pos + span, length)
            vocals[pos:end] = 0
        else:
            span = int(rng.integers(cfg.segment_len[0], cfg.segment_len[1] + 1))
            end = min(pos + span, length)
            pitch = int(rng.integers(1, cfg.n_vocal))
            for k in range(pos, end):
                vocals[k] = pitch
                step = int(rng.integers(-cfg.walk_step, cfg.walk_step + 1))
                pitch = min(cfg.n_vocal - 1, max(1, pitch + step))
        pos = end
        resting = not resting

    accomp = np.empty(length, dtype=np.int64)
    for i in range(length):
        accomp[i] = grammar_token(int(vocals[i]), style, i)
    if cfg.epsilon > 0.0:
        noisy = rng.random(length) < cfg.epsilon
        for i in np.flatnonzero(noisy):
            cat = category_tokens(int(vocals[i]), i)
            accomp[i] = int(rng.choice(cat))

    return SynthInstance(
        style=style,
        vocals=vocals,
        accomp=accomp,
        events=harmony_onsets(accomp),
        rest_spans=rest_spans_of(vocals),
        seed=seed,
    )


def reference_snippet(instance, crop, length, rng):
    """A contiguous accompaniment slice disjoint from the training crop.

    ``crop`` is the half-open (start, stop) range used for training. The
    snippet start is drawn uniformly over all placements outside the crop.
    """
    total = len(instance.accomp)
    lo, hi = crop
    starts = [s for s in range(total - length + 1) if s + length <= lo or s >= hi]
    if not starts:
        raise ValueError(
            f"reference_snippet: no disjoint placement of length {length} outside "
            f"crop [{lo}, {hi}) in a sequence of length {total}"
        )
    start = int(starts[rng.integers(len(starts))])
    return start, instance.accomp[start : start + length].copy()


def oracle_posterior(vocals, style, i, cfg):
    """Exact P(a_i | V, style) under the grammar; style None mixes uniformly.

    Returns a length-n_acc probability vector.
    """
    if not 0 <= i < len(vocals):
        raise ValueError(f"oracle_posterior: position {i} outside sequence")
    v = int(vocals[i])
    styles = range(cfg.n_styles) if style is None else [style]
    post = np.zeros(cfg.n_acc, dtype=np.float64)
    cat = category_tokens(v, i)
    for s in styles:
        post[grammar_token(v, s, i)] += 1.0 - cfg.epsilon
        post[cat] += cfg.epsilon / len(cat)
    post /= len(list(styles))
    return post


def passes_stage2_filter(instance):
    """Quality gate for long-sequence training: a short intro and real content."""
    spans = instance.rest_spans
    intro = spans[0][1] if spans and spans[0][0] == 0 else 0
    has_melody = bool(np.any(np.asarray(instance.vocals) != 0))
    return intro <= 12 and has_melody


# ------------------------------------------------------------- file format


def format_record(instance):
    """One-line structured-text record for a generated pair."""

    def ints(xs):
        return ",".join(str(int(x)) for x in xs)

    spans = ",".join(f"{s}:{n}" for s, n in instance.rest_spans)
    return (
        f"version=1 seed={instance.seed} style={instance.style} "
        f"V={ints(instance.vocals)} A0={ints(instance.accomp)} "
        f"events={ints(instance.events)} rest_spans={spans}"
    )


def parse_record(line):
    fields = {}
    for part in line.strip().split(" "):
        key, _, val = part.partition("=")
        fields[key] = val
    if fields.get("version") != "1":
        raise ValueError(f"parse_record: unsupported record version {fields.get('version')!r}")

    def ints(s):
        return np.array([int(x) for x in s.split(",")] if s else [], dtype=np.int64)

    spans = []
    if fields["rest_spans"]:
        for pair in fields["rest_spans"].split(","):
            s, _, n = pair.partition(":")
            spans.append((int(s), int(n)))
    return SynthInstance(
        style=int(fields["style"]),
        vocals=ints(fields["V"]),
        accomp=ints(fields["A0"]),
        events=list(ints(fields["events"])),
        rest_spans=spans,
        seed=int(fields["seed"]),
    )


def make_dataset(n_songs, length, cfg, dataset_seed):
    """Deterministic list of instances; each record is self-contained."""
    instances = []
    for i in range(n_songs):
        seed_i = int(np.random.SeedSequence((dataset_seed, i)).generate_state(1)[0])
        rng = np.random.default_rng(seed_i)
        style = int(rng.integers(cfg.n_styles))
        instances.append(gen_pair(style, length, cfg, rng, seed=seed_i))
    return instances


def write_dataset(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(format_record(inst) + "\n")


def read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return [parse_record(line) for line in fh if line.strip()]
