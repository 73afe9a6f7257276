"""Losses and the two-stage training loop.

One optimizer step: draw a quasi-random noise level per item, mask the
accompaniment, swap in replaced-token corruptions on the surviving tokens,
assemble the conditioned input with classifier-free dropout, then take the
combined masked-modeling + detection loss through backward, clipping, and
AdamW. Stage 1 trains short crops; stage 2 fine-tunes at full length on
filter-passing instances only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .corruption import TokenSeq, mask_forward, rtd_corrupt
from .model import ar_forward, encode_tokens, forward
from .optim import AdamWState, adamw_step, clip_grad_norm
from .representation import Condition
from .schedules import LrSchedule, MaskSchedule, SobolEngine
from .synthdata import SynthConfig, gen_pair, passes_stage2_filter, reference_snippet

log = logging.getLogger(__name__)

T_FLOOR = 1e-3
REF_LEN = 16


@dataclass
class LossBreakdown:
    cml: float
    rtd: float
    total: float
    lam: float
    t_used: tuple
    masked_count: int


@dataclass
class CurriculumStage:
    name: str
    seq_len: int
    steps: int
    filtered: bool = False


@dataclass
class TrainerConfig:
    lam: float = 0.2
    rho: float = 0.15
    rtd_mode: str = "argmax"
    rtd_temperature: float = 1.0
    dropout_p: float = 0.5
    clip_norm: float = 1.0
    batch: int = 16
    accum: int = 1
    mode: str = "mask"  # "mask" or "ar"


# ------------------------------------------------------------------ losses


def cml_loss(logits, targets, mask_set, t, nonpad=None):
    """Masked-token negative log-likelihood with the 1/(t*T) weight.

    Each item contributes -(1 / (max(t, floor) * T_nonpad)) * sum over its
    masked positions of log p(target); the batch reduces by mean.
    """
    targets = np.asarray(targets)
    mask_set = np.asarray(mask_set, dtype=bool)
    b = targets.shape[0]
    if nonpad is None:
        nonpad = np.ones_like(mask_set)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    t_nonpad = nonpad.sum(axis=1)
    weights = np.zeros(targets.shape, dtype=np.float64)
    for i in range(b):
        if t_nonpad[i] == 0:
            continue
        weights[i, mask_set[i]] = 1.0 / (max(t[i], T_FLOOR) * t_nonpad[i] * b)
    return tz.weighted_nll(logits, np.where(mask_set, targets, 0), weights)


def rtd_loss(rtd_prob, labels, scored):
    """Binary cross-entropy of the detection head, mean over scored positions.

    ``labels`` is True where the token is original; ``scored`` marks the
    non-pad, non-masked positions that enter the loss.
    """
    labels = np.asarray(labels, dtype=np.float64)
    scored = np.asarray(scored, dtype=bool)
    b = labels.shape[0]
    weights = np.zeros(labels.shape, dtype=np.float64)
    for i in range(b):
        n = int(scored[i].sum())
        if n:
            weights[i, scored[i]] = 1.0 / (n * b)
    one_minus = tz.add(tz.scale(rtd_prob, -1.0), 1.0)
    term = tz.add(
        tz.mul(tz.log(rtd_prob), labels),
        tz.mul(tz.log(one_minus), 1.0 - labels),
    )
    return tz.scale(tz.weighted_sum(term, weights), -1.0)


def total_loss(cml, rtd, lam):
    """Combine the two losses; lam = 0 keeps the detection path out of the graph."""
    if lam == 0.0:
        total = cml
    else:
        total = tz.add(cml, tz.scale(rtd, lam))
    return total


# ----------------------------------------------------------------- trainer


class Trainer:
    """Holds model, schedules, optimizer state, and the rng streams."""

    def __init__(self, model, tcfg, lr_sched=None, mask_sched=None, seed=0,
                 synth_cfg=None):
        self.model = model
        self.tcfg = tcfg
        self.lr_sched = lr_sched or LrSchedule()
        self.mask_sched = mask_sched or MaskSchedule()
        self.synth_cfg = synth_cfg or SynthConfig()
        self.opt = AdamWState()
        self.sobol = SobolEngine()
        self.seed = seed
        self.rng_corrupt = np.random.default_rng(np.random.SeedSequence((seed, 3)))
        self.rng_dropout = np.random.default_rng(np.random.SeedSequence((seed, 4)))
        self.rng_rtd = np.random.default_rng(np.random.SeedSequence((seed, 5)))
        self.step = 0
        self.stage = 0
        self.had_forward = False

    # ------------------------------------------------------------ helpers

    def _conditions(self, batch, training=True):
        conds = []
        for item in batch:
            conds.append(Condition(style_id=item["style"], reference=item["snippet"]))
        return conds

    def _encode(self, voc_ids, acc_ids, conds, training):
        return encode_tokens(
            self.model,
            voc_ids,
            acc_ids,
            conds,
            dropout_p=self.tcfg.dropout_p,
            training=training,
            rng=self.rng_dropout,
        )

    def _replacement_logits(self, voc_ids, masked_ids, conds):
        """Detached predictor logits on the masked input, for rtd sampling."""
        if not self.had_forward:
            return None
        with tz.no_grad():
            x = self._encode(voc_ids, masked_ids, conds, training=False)
            out = forward(self.model, x)
        return out.logits.data

    # --------------------------------------------------------------- step

    def train_step(self, batch):
        """One optimizer step over a prepared batch of equal-length items.

        Each item is a dict with keys V, A0 (int arrays), style, snippet.
        Raises without touching parameters if the loss goes non-finite.
        """
        chunks = np.array_split(np.arange(len(batch)), self.tcfg.accum)
        self.model.zero_grad()
        cml_v = rtd_v = total_v = 0.0
        t_used = []
        masked_count = 0
        for chunk in chunks:
            items = [batch[i] for i in chunk]
            if not items:
                continue
            bd = self._micro_batch(items, scale=1.0 / len(chunks))
            cml_v += bd.cml
            rtd_v += bd.rtd
            total_v += bd.total
            t_used.extend(bd.t_used)
            masked_count += bd.masked_count
        if not np.isfinite(total_v):
            raise RuntimeError(
                f"train_step: non-finite loss {total_v} at step {self.step} "
                f"(trainer seed {self.seed}); step aborted"
            )
        grads = self.model.grads()
        grads, grad_norm = clip_grad_norm(grads, self.tcfg.clip_norm)
        lr = self.lr_sched.lr_at(self.step + 1)
        adamw_step(self.model.params, grads, self.opt, lr)
        self.step += 1
        self.had_forward = True
        self.last_grad_norm = grad_norm
        self.last_lr = lr
        return LossBreakdown(
            cml=cml_v,
            rtd=rtd_v,
            total=total_v,
            lam=self.tcfg.lam,
            t_used=tuple(t_used),
            masked_count=masked_count,
        )

    def _micro_batch(self, items, scale=1.0):
        if self.tcfg.mode == "ar":
            return self._micro_batch_ar(items, scale)
        voc_ids = np.stack([it["V"] for it in items])
        clean = [it["A0seq"] for it in items]
        conds = self._conditions(items)

        t_used = []
        recs = []
        for seq in clean:
            r = self.sobol.next()
            t = self.mask_sched.mask_ratio(r)
            recs.append(mask_forward(seq, t, self.rng_corrupt))
            t_used.append(t)
        masked_ids = np.stack([rec.seq.tokens for rec in recs])

        rep_logits = None
        if self.tcfg.rho > 0 and self.tcfg.rtd_mode != "uniform":
            rep_logits = self._replacement_logits(voc_ids, masked_ids, conds)
        corrupted = []
        labels = []
        for i, rec in enumerate(recs):
            seq_c, _, lab = rtd_corrupt(
                rec.seq,
                self.tcfg.rho,
                self.rng_rtd,
                mode=self.tcfg.rtd_mode,
                logits=rep_logits[i] if rep_logits is not None else None,
                temperature=self.tcfg.rtd_temperature,
                clean=clean[i],
            )
            corrupted.append(seq_c.tokens)
            labels.append(lab)
        acc_ids = np.stack(corrupted)
        labels = np.stack(labels)

        mask_set = np.stack([rec.mask_set for rec in recs])
        nonpad = np.stack([~seq.pad_mask() for seq in clean])
        targets = np.stack([seq.tokens for seq in clean])

        x = self._encode(voc_ids, acc_ids, conds, training=True)
        out = forward(self.model, x)
        cml = cml_loss(out.logits, targets, mask_set, np.array(t_used), nonpad)
        scored = nonpad & ~mask_set
        rtd = rtd_loss(out.rtd_prob, labels, scored)
        total = total_loss(cml, rtd, self.tcfg.lam)
        tz.backward(tz.scale(total, scale) if scale != 1.0 else total)
        return LossBreakdown(
            cml=cml.item() * scale,
            rtd=rtd.item() * scale,
            total=total.item() * scale,
            lam=self.tcfg.lam,
            t_used=t_used,
            masked_count=int(mask_set.sum()),
        )

    def _micro_batch_ar(self, items, scale=1.0):
        """Next-token cross-entropy on fully visible input with a causal mask."""
        voc_ids = np.stack([it["V"] for it in items])
        targets = np.stack([it["A0seq"].tokens for it in items])
        nonpad = np.stack([~it["A0seq"].pad_mask() for it in items])
        conds = self._conditions(items)
        x = self._encode(voc_ids, targets, conds, training=True)
        out = ar_forward(self.model, x)
        loss = tz.softmax_cross_entropy(out.logits, targets, active=nonpad)
        tz.backward(tz.scale(loss, scale) if scale != 1.0 else loss)
        val = loss.item() * scale
        return LossBreakdown(
            cml=val, rtd=0.0, total=val, lam=0.0, t_used=(), masked_count=0
        )


# -------------------------------------------------------------- curriculum


def desk_stages(stage1_steps=500, stage2_steps=60):
    return [
        CurriculumStage("stage1", seq_len=64, steps=stage1_steps),
        CurriculumStage("stage2", seq_len=256, steps=stage2_steps, filtered=True),
    ]


def sample_training_item(seq_len, synth_cfg, rng, filtered=False):
    """Draw one instance with a disjoint reference snippet; crop is [0, seq_len)."""
    while True:
        style = int(rng.integers(synth_cfg.n_styles))
        inst = gen_pair(style, seq_len + REF_LEN, synth_cfg, rng)
        if filtered and not passes_stage2_filter(inst):
            continue
        _, snippet = reference_snippet(inst, (0, seq_len), REF_LEN, rng)
        a0 = TokenSeq(
            inst.accomp[:seq_len],
            synth_cfg.n_acc,
            mask_id=synth_cfg.mask_id,
            pad_id=synth_cfg.pad_id,
        )
        return {
            "V": inst.vocals[:seq_len],
            "A0seq": a0,
            "style": style,
            "snippet": snippet,
            "instance": inst,
        }


def run_curriculum(trainer, stages, seed, log_fn=None, checkpoint_fn=None):
    """Run the staged loop; returns per-stage final LossBreakdowns.

    ``log_fn`` receives one structured line per step; ``checkpoint_fn`` is
    called as checkpoint_fn(stage_name, trainer) after each stage.
    """
    results = []
    for stage_idx, stage in enumerate(stages, start=1):
        trainer.stage = stage_idx
        rng = np.random.default_rng(np.random.SeedSequence((seed, 10 + stage_idx)))
        last = None
        for _ in range(stage.steps):
            batch = [
                sample_training_item(stage.seq_len, trainer.synth_cfg, rng, stage.filtered)
                for _ in range(trainer.tcfg.batch)
            ]
            last = trainer.train_step(batch)
            if log_fn is not None:
                log_fn(format_loss_line(trainer, last))
        results.append(last)
        if checkpoint_fn is not None:
            checkpoint_fn(stage.name, trainer)
    return results


def format_loss_line(trainer, bd):
    t_mean = float(np.mean(bd.t_used)) if bd.t_used else 0.0
    return (
        f"step={trainer.step} stage={trainer.stage} lr={trainer.last_lr:.17g} "
        f"cml={bd.cml:.17g} rtd={bd.rtd:.17g} total={bd.total:.17g} "
        f"lam={bd.lam:.17g} t_mean={t_mean:.17g} masked={bd.masked_count} "
        f"grad_norm={trainer.last_grad_norm:.17g}"
    )
