#!/usr/bin/env python3
"""Train a small model end to end and watch the loss terms and metrics move.

This is the whole learning loop at reduced scale: Sobol-stratified masking,
replaced-token-detection corruption on top, condition dropout, AdamW with
warmup and cosine decay, then evaluation with the low-confidence remasking
sampler under full and zero-shot conditioning. Takes a minute or two on a
laptop core.

Run: python demos/04_tiny_training.py
"""

import time

import numpy as np

from duetdiff import (
    CurriculumStage,
    LrSchedule,
    Predictor,
    PredictorConfig,
    SamplerParams,
    SynthConfig,
    Trainer,
    TrainerConfig,
    count_params,
    run_curriculum,
)
from duetdiff.evaluation import evaluate_generation
from duetdiff.training import sample_training_item

SEQ_LEN = 32
STEPS = 1200


def main():
    pcfg = PredictorConfig(dim=64, layers=2, heads=2, ffn_mult=2, max_dual_len=SEQ_LEN)
    model = Predictor(pcfg, seed=0)
    print(f"model: dim={pcfg.dim} layers={pcfg.layers} heads={pcfg.heads}, "
          f"{count_params(pcfg)} parameters")

    tcfg = TrainerConfig(batch=8)
    lr = LrSchedule(base_lr=2e-3, warmup_steps=60, total_steps=STEPS)
    trainer = Trainer(model, tcfg, lr_sched=lr, seed=0)

    print(f"training: {STEPS} steps at seq_len={SEQ_LEN}, batch={tcfg.batch}, "
          f"lambda={tcfg.lam}, rho={tcfg.rho}")
    print()

    def log_fn(line):
        step = int(line.split()[0].split("=")[1])
        if step % 150 == 0 or step == 1:
            print(line)

    start = time.time()
    run_curriculum(
        trainer,
        [CurriculumStage("demo", seq_len=SEQ_LEN, steps=STEPS)],
        seed=0,
        log_fn=log_fn,
    )
    print(f"\ntrained in {time.time() - start:.0f} s")
    print()
    print("cml is the masked-prediction term (1/(t*T)-weighted cross entropy),")
    print("rtd the detector's binary cross entropy over unmasked positions,")
    print("total = cml + lambda * rtd. Early steps sit near ln(64) = 4.16 for")
    print("cml and ln(2) = 0.69 for rtd; both fall as the grammar is learned.")
    print()

    scfg = SynthConfig()
    rng = np.random.default_rng(np.random.SeedSequence((99, 0)))
    items = [sample_training_item(SEQ_LEN, scfg, rng) for _ in range(30)]
    eval_rng = np.random.default_rng(np.random.SeedSequence((99, 1)))

    print("=== Held-out evaluation, 30 fresh songs ===")
    for condition, steps, temp in (("full", 5, 0.0), ("zero_shot", 16, 1.0)):
        params = SamplerParams(steps=steps, schedule="cosine", temperature=temp)
        rep = evaluate_generation(model, items, condition, params, scfg, eval_rng)
        print(f"{condition:>9}: token_accuracy={rep.token_accuracy:.3f} "
              f"style_consistency={rep.style_consistency:.3f} "
              f"onset_f1={rep.onset_f1:.3f} (steps={steps})")
    print()
    print("Full conditioning names the style, so the grammar is exactly")
    print("recoverable and token accuracy lands at its ceiling. Zero-shot can")
    print("only be graded on coherence: style consistency sits far above the")
    print("~0.4 of independent 4-way sampling (see demos/03), while raw token")
    print("accuracy stays capped near 0.25 plus the rest positions, exactly as")
    print("the oracle predicts. The CLI's desk-scale defaults train the same")
    print("way with a larger model, longer sequences, and a two-stage schedule.")


if __name__ == "__main__":
    main()
