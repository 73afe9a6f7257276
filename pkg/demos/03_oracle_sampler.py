#!/usr/bin/env python3
"""The reverse process, driven by the exact grammar posterior instead of a net.

``generate`` accepts any callable mapping current accompaniment tokens to a
logits array, so we can plug in the true P(a_i | V, style) and watch the
low-confidence remasking machinery in isolation: how the masked count walks
down the schedule, how unsure positions get remasked and revisited, and how
step count trades model calls against accuracy when the posterior is
ambiguous (style unknown).

Run: python demos/03_oracle_sampler.py
"""

import numpy as np

from duetdiff import SamplerParams, SynthConfig, gen_pair, generate, oracle_posterior
from duetdiff.sampling import init_state, reverse_step


def oracle_model(vocals, style, cfg, floor=1e-9):
    """Build an acc_tokens -> logits callable from the exact posterior."""
    t = len(vocals)
    logp = np.full((1, t, cfg.n_acc), np.log(floor))
    for i in range(t):
        post = oracle_posterior(vocals, style, i, cfg)
        nz = post > 0
        logp[0, i, nz] = np.log(post[nz])
    return lambda acc_tokens: np.repeat(logp, len(acc_tokens), axis=0)


def render(tokens, mask_id):
    return " ".join(". " if tok == mask_id else f"{tok:2d}" for tok in tokens)


def main():
    cfg = SynthConfig()
    rng = np.random.default_rng(5)
    inst = gen_pair(2, 20, cfg, rng)
    print(f"vocals : {' '.join(f'{v:2d}' for v in inst.vocals)}")
    print(f"target : {render(inst.accomp, cfg.mask_id)}   (style {inst.style})")
    print()

    print("=== Step-by-step trajectory, style known ===")
    model = oracle_model(inst.vocals, inst.style, cfg)
    params = SamplerParams(steps=6, schedule="cosine", temperature=0.0)
    traj = params.mask_schedule().remask_trajectory(params.steps)
    state = init_state(1, 20, cfg.mask_id, cfg.pad_id, np.ones((1, 20), dtype=bool))
    decode_rng = np.random.default_rng(0)
    for k in range(params.steps):
        masked = int((state.tokens[0] == cfg.mask_id).sum())
        print(f"before call {k}: t={traj[k]:.3f} masked={masked:2d}  {render(state.tokens[0], cfg.mask_id)}")
        logits = model(state.tokens)
        state = reverse_step(
            logits, state, traj[k], traj[k + 1], params, decode_rng,
            np.ones((1, 20), dtype=bool),
        )
    print(f"final:    t=0.000 masked= 0  {render(state.tokens[0], cfg.mask_id)}")
    exact = np.array_equal(state.tokens[0], inst.accomp)
    print(f"matches target: {exact}")
    print()
    print("Each call fills every masked slot, then remasks the least confident")
    print("fills back to ceil(t_next * 20). With the style known the posterior")
    print("is a point mass, so whatever survives is already correct.")
    print()

    print("=== Remasking under ambiguity, style unknown ===")
    print("With the style marginalized out, every harmony position is a 4-way")
    print("coin flip. One pass gets ~25% of them; more steps let remasking")
    print("retry, but the posterior never sharpens, so accuracy stays low:")
    model_zs = oracle_model(inst.vocals, None, cfg)
    n_rep = 400
    voc_rep = np.repeat(inst.vocals[None, :], n_rep, axis=0)
    target_rep = np.repeat(inst.accomp[None, :], n_rep, axis=0)
    for steps in (1, 4, 16):
        params = SamplerParams(steps=steps, schedule="cosine", temperature=1.0)
        res = generate(voc_rep, [None] * n_rep, model_zs, params, np.random.default_rng(1), cfg)
        acc = (res.tokens == target_rep).mean()
        print(f"steps={steps:2d}: token accuracy {acc:.3f}, forward passes {res.model_calls}")
    print()
    print("A trained net conditioned on a reference snippet resolves exactly")
    print("this ambiguity; the oracle shows the ceiling either side of it.")
    print()

    print("=== Consistency beats per-token marginals ===")
    print("Token accuracy against one held-out target cannot exceed 25% when")
    print("the style is unknowable, so zero-shot quality is graded differently:")
    print("style consistency, the majority-vote share of the per-position style")
    print("votes inside one song. A sampler that commits to ONE coherent style")
    print("scores 1.0; per-position marginal sampling scores whatever the")
    print("majority share of independent 4-way picks happens to be:")
    params = SamplerParams(steps=16, schedule="cosine", temperature=1.0)
    res = generate(voc_rep, [None] * n_rep, model_zs, params, np.random.default_rng(2), cfg)
    from duetdiff.evaluation import style_consistency

    scs = []
    for b in range(n_rep):
        sc, _ = style_consistency(res.tokens[b], inst.vocals)
        if sc is not None:
            scs.append(sc)
    print(f"mean within-song style consistency, independent fills: {np.mean(scs):.3f}")
    print("(13 harmony positions, 4-way uniform votes: expected majority share")
    print("is ~0.40, far below the ~1.0 a style-committed model reaches. The")
    print("gap is how the metrics detect marginal sampling vs. commitment.)")


if __name__ == "__main__":
    main()
