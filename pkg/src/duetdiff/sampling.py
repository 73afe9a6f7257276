"""Iterative low-confidence remasking sampler and the causal baseline.

Generation starts fully masked and walks a decreasing mask-ratio
trajectory. Each step predicts every masked position, samples tokens
through temperature / top-k / top-p filtering, then re-masks the lowest
ranked fraction of the fresh predictions, where rank is pre-filter
confidence perturbed by Gumbel noise that anneals away as the trajectory
approaches zero. Committed positions are immutable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .model import Predictor, ar_forward, encode_tokens, forward
from .representation import Condition, build_input, build_prefix, embed_dual
from .schedules import MaskSchedule
from .synthdata import SynthConfig

log = logging.getLogger(__name__)


@dataclass
class SamplerParams:
    steps: int = 60
    schedule: str = "cosine"
    power_exponent: float = 2.0
    top_k: int = 100
    top_p: float = 0.9
    temperature: float = 1.0
    mask_temperature: float = 10.5
    guidance: float = 1.0

    def mask_schedule(self):
        return MaskSchedule(kind=self.schedule, power_exponent=self.power_exponent)


@dataclass
class SamplerState:
    tokens: np.ndarray  # (B, T) current accompaniment tokens
    committed: np.ndarray  # (B, T) bool
    confidence: np.ndarray  # (B, T) last pre-filter confidence
    mask_id: int
    step_index: int = 0
    model_calls: int = 0


@dataclass
class GenerateResult:
    tokens: np.ndarray  # (B, T)
    model_calls: int  # forward passes per song
    trajectory: list = field(default_factory=list)


def guided_logits(model, voc_ids, acc_ids, conds, w=1.0):
    """Classifier-free guided logits.

    w = 1 is a single conditional pass (bit-identical to a plain forward);
    otherwise two passes combine as null + w * (cond - null), so w = 0
    reproduces the null-prefix forward exactly. Returns (logits array,
    number of forward passes).
    """
    cond_out = _plain_logits(model, voc_ids, acc_ids, conds)
    if w == 1.0:
        return cond_out, 1
    null = [Condition(None, None) for _ in conds]
    null_out = _plain_logits(model, voc_ids, acc_ids, null)
    return null_out + w * (cond_out - null_out), 2


def _plain_logits(model, voc_ids, acc_ids, conds):
    with tz.no_grad():
        out = forward(model, encode_tokens(model, voc_ids, acc_ids, conds, training=False))
    return out.logits.data


def filter_and_sample(logits, temperature, top_k, top_p, rng):
    """Sample one token per row after temperature, top-k, then top-p.

    Returns (tokens, confidence) where confidence is the maximum of the
    pre-filter (post-temperature) distribution. temperature = 0 is greedy
    with confidence taken from the unscaled softmax.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    if temperature <= 0.0:
        z = logits - logits.max(axis=-1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        toks = np.argmax(logits, axis=-1)
        return toks, p[np.arange(n), toks]

    z = logits / temperature
    z -= z.max(axis=-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=-1, keepdims=True)
    conf = probs.max(axis=-1)

    order = np.argsort(-probs, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    keep = np.ones_like(sorted_p, dtype=bool)
    kk = min(top_k, k) if top_k else k
    keep[:, kk:] = False
    if top_p < 1.0:
        cum = np.cumsum(sorted_p, axis=-1)
        keep &= (cum - sorted_p) < top_p
    sorted_p = np.where(keep, sorted_p, 0.0)
    sorted_p /= sorted_p.sum(axis=-1, keepdims=True)

    u = rng.random((n, 1))
    pick = (np.cumsum(sorted_p, axis=-1) > u).argmax(axis=-1)
    toks = order[np.arange(n), pick]
    return toks, conf


def reverse_step(logits, state, t_cur, t_next, params, rng, nonpad):
    """One remasking step over a batch; mutates and returns ``state``.

    Only currently masked, non-pad positions are predicted. After the step
    each item keeps exactly ceil(t_next * T_nonpad) positions masked,
    capped at the number of fresh predictions. Re-mask ranking ties break
    toward lower raw confidence, then lower position index.
    """
    b, _ = state.tokens.shape
    for i in range(b):
        masked = np.flatnonzero((state.tokens[i] == state.mask_id) & nonpad[i])
        if masked.size == 0:
            continue
        toks, conf = filter_and_sample(
            logits[i, masked], params.temperature, params.top_k, params.top_p, rng
        )
        gumbel = -np.log(-np.log(rng.random(masked.size)))
        score = np.log(np.maximum(conf, 1e-300))
        score = score + params.mask_temperature * t_cur * gumbel
        n_nonpad = int(nonpad[i].sum())
        m_next = math.ceil(t_next * n_nonpad)
        if m_next > masked.size:
            log.info(
                "reverse_step: target mask count %d exceeds %d fresh predictions",
                m_next,
                masked.size,
            )
            m_next = masked.size
        order = np.lexsort((np.arange(masked.size), conf, score))
        keep = np.ones(masked.size, dtype=bool)
        keep[order[:m_next]] = False
        state.tokens[i, masked[keep]] = toks[keep]
        state.committed[i, masked[keep]] = True
        state.confidence[i, masked] = conf
    state.step_index += 1
    return state


def init_state(batch, length, mask_id, pad_id=None, nonpad=None):
    state = SamplerState(
        tokens=np.full((batch, length), mask_id, dtype=np.int64),
        committed=np.zeros((batch, length), dtype=bool),
        confidence=np.zeros((batch, length)),
        mask_id=mask_id,
    )
    if nonpad is not None and pad_id is not None:
        state.tokens[~nonpad] = pad_id
    return state


def generate(vocals, cond, model, params, rng, synth_cfg=None):
    """Decode accompaniment for one or more vocal tracks.

    ``vocals`` is (T,) or (B, T); ``cond`` one Condition or a list.
    ``model`` is a Predictor, or a callable acc_tokens -> logits array for
    oracle-style testing. With guidance 1 the model runs exactly
    ``params.steps`` forward passes.
    """
    voc = np.atleast_2d(np.asarray(vocals, dtype=np.int64))
    b, t = voc.shape
    conds = cond if isinstance(cond, list) else [cond] * b
    scfg = synth_cfg or SynthConfig()
    nonpad = voc != scfg.vocal_pad_id

    traj = params.mask_schedule().remask_trajectory(params.steps)
    state = init_state(b, t, scfg.mask_id, scfg.pad_id, nonpad)

    calls = 0
    for idx in range(params.steps):
        t_cur, t_next = traj[idx], traj[idx + 1]
        if isinstance(model, Predictor):
            logits, n = guided_logits(model, voc, state.tokens, conds, params.guidance)
            calls += n
        else:
            logits = model(state.tokens)
            calls += 1
        state = reverse_step(logits, state, t_cur, t_next, params, rng, nonpad)
    state.model_calls = calls
    leftover = (state.tokens == scfg.mask_id) & nonpad
    if leftover.any():
        raise RuntimeError("generate: masked positions survived the full trajectory")
    return GenerateResult(tokens=state.tokens, model_calls=calls, trajectory=traj)


def ar_generate(vocals, cond, model, params, rng, synth_cfg=None):
    """Left-to-right decoding with the causal variant of the same model.

    Position i is sampled from a truncated pass over the prefix plus dual
    rows 0..i, where row i carries a dummy accompaniment token that the
    shifted causal readout provably never sees. One model call per token.
    """
    voc = np.atleast_2d(np.asarray(vocals, dtype=np.int64))
    b, t = voc.shape
    conds = cond if isinstance(cond, list) else [cond] * b
    scfg = synth_cfg or SynthConfig()
    out_tokens = np.zeros((b, t), dtype=np.int64)
    calls = 0
    with tz.no_grad():
        prefix = build_prefix(
            model.prefix_params(), model.params["emb.acc"], conds, training=False
        )
        acc_fill = np.full((b, t), scfg.mask_id, dtype=np.int64)
        for i in range(t):
            dual = embed_dual(
                model.dual_embedding(), voc[:, : i + 1], acc_fill[:, : i + 1]
            )
            out = ar_forward(model, build_input(prefix, dual))
            logits = out.logits.data[:, -1, :]
            calls += 1
            toks, _ = filter_and_sample(
                logits, params.temperature, params.top_k, params.top_p, rng
            )
            out_tokens[:, i] = toks
            acc_fill[:, i] = toks
    out_tokens[voc == scfg.vocal_pad_id] = scfg.pad_id
    return GenerateResult(tokens=out_tokens, model_calls=calls, trajectory=[])
