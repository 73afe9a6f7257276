"""Predictor trunk, heads, stream layouts, and parameter accounting."""

import numpy as np
import pytest

from duetdiff import tensor as tz
from duetdiff.model import (
    Predictor,
    PredictorConfig,
    ar_forward,
    count_params,
    encode_tokens,
    forward,
    full_scale_config,
)
from duetdiff.representation import N_PREFIX, Condition


def tiny_config(**kw):
    base = dict(dim=16, layers=1, heads=2, ffn_mult=2, max_dual_len=8)
    base.update(kw)
    return PredictorConfig(**base)


def make_batch(rng, b, t, cfg):
    voc = rng.integers(0, cfg.n_vocal, size=(b, t))
    acc = rng.integers(0, cfg.n_acc, size=(b, t))
    conds = [
        Condition(int(rng.integers(cfg.n_styles)), rng.integers(0, cfg.n_acc, size=4))
        for _ in range(b)
    ]
    return voc, acc, conds


# ------------------------------------------------------------ accounting


def test_count_params_matches_instances():
    for cfg in (
        tiny_config(),
        tiny_config(layers=3, ffn_mult=4),
        tiny_config(single_stream=True),
        PredictorConfig(),
    ):
        model = Predictor(cfg, seed=0)
        assert count_params(cfg) == model.count_params()


def test_desk_default_size_band():
    n = count_params(PredictorConfig())
    assert 3e5 <= n <= 1e6


def test_full_scale_shapes_without_allocation():
    cfg = full_scale_config()
    assert cfg.max_rows == N_PREFIX + 4096
    assert cfg.track_width == 1024
    n = count_params(cfg)
    assert 8e8 < n < 1.2e9


def test_config_validation():
    with pytest.raises(ValueError, match="even"):
        PredictorConfig(dim=15)
    with pytest.raises(ValueError, match="heads"):
        PredictorConfig(dim=16, heads=3)


def test_param_declaration_order_stable():
    model = Predictor(tiny_config(), seed=0)
    names = list(model.params)
    assert names[0] == "emb.voc"
    assert names[-1] == "head.rtd_b"
    assert names.index("block0.ln1.g") < names.index("block0.ffn.w2")


# -------------------------------------------------------------- forward


def test_forward_shapes_and_rtd_range():
    cfg = tiny_config()
    model = Predictor(cfg, seed=1)
    rng = np.random.default_rng(0)
    voc, acc, conds = make_batch(rng, 2, 5, cfg)
    out = forward(model, encode_tokens(model, voc, acc, conds))
    assert out.logits.shape == (2, 5, cfg.n_acc)
    assert out.rtd_prob.shape == (2, 5)
    assert np.all(out.rtd_prob.data > 0) and np.all(out.rtd_prob.data < 1)
    tz.clear_tape()


def test_forward_rejects_rows_beyond_position_table():
    cfg = tiny_config(max_dual_len=4)
    model = Predictor(cfg, seed=1)
    rng = np.random.default_rng(0)
    voc, acc, conds = make_batch(rng, 1, 6, cfg)
    with pytest.raises(ValueError, match="exceed"):
        forward(model, encode_tokens(model, voc, acc, conds))
    tz.clear_tape()


def test_attention_rows_are_distributions():
    cfg = tiny_config(layers=2)
    model = Predictor(cfg, seed=2)
    rng = np.random.default_rng(3)
    voc, acc, conds = make_batch(rng, 1, 6, cfg)
    out = forward(model, encode_tokens(model, voc, acc, conds), collect_attn=True)
    assert len(out.attn) == 2
    for probs in out.attn:
        assert probs.shape == (1, cfg.heads, N_PREFIX + 6, N_PREFIX + 6)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    tz.clear_tape()


def test_bidirectional_attention_sees_the_future():
    cfg = tiny_config()
    model = Predictor(cfg, seed=4)
    rng = np.random.default_rng(5)
    voc, acc, conds = make_batch(rng, 1, 5, cfg)
    base = forward(model, encode_tokens(model, voc, acc, conds)).logits.data.copy()
    tz.clear_tape()
    acc2 = acc.copy()
    acc2[0, -1] = (acc2[0, -1] + 1) % cfg.n_acc
    bumped = forward(model, encode_tokens(model, voc, acc2, conds)).logits.data
    tz.clear_tape()
    assert np.abs(base[0, 0] - bumped[0, 0]).max() > 0


def test_causal_readout_blind_to_present_and_future():
    cfg = tiny_config()
    model = Predictor(cfg, seed=6)
    rng = np.random.default_rng(7)
    voc, acc, conds = make_batch(rng, 1, 5, cfg)
    base = ar_forward(model, encode_tokens(model, voc, acc, conds)).logits.data.copy()
    tz.clear_tape()
    j = 3
    voc2, acc2 = voc.copy(), acc.copy()
    voc2[0, j] = (voc2[0, j] + 1) % cfg.n_vocal
    acc2[0, j] = (acc2[0, j] + 1) % cfg.n_acc
    bumped = ar_forward(model, encode_tokens(model, voc2, acc2, conds)).logits.data
    tz.clear_tape()
    # logits[i] reads the row strictly below dual position i, so edits at
    # position j leak only into positions i > j
    np.testing.assert_array_equal(base[0, : j + 1], bumped[0, : j + 1])
    assert np.abs(base[0, j + 1 :] - bumped[0, j + 1 :]).max() > 0


def test_causal_attention_mask_zeroes_future():
    cfg = tiny_config()
    model = Predictor(cfg, seed=8)
    rng = np.random.default_rng(9)
    voc, acc, conds = make_batch(rng, 1, 4, cfg)
    x = encode_tokens(model, voc, acc, conds)
    out = ar_forward(model, x, collect_attn=True)
    probs = out.attn[0]
    rows = probs.shape[-1]
    upper = np.triu_indices(rows, k=1)
    assert np.all(probs[0, :, upper[0], upper[1]] == 0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    tz.clear_tape()


def test_ar_forward_rejects_single_stream():
    cfg = tiny_config(single_stream=True)
    model = Predictor(cfg, seed=10)
    rng = np.random.default_rng(11)
    voc, acc, conds = make_batch(rng, 1, 3, cfg)
    with pytest.raises(ValueError, match="dual-track"):
        ar_forward(model, encode_tokens(model, voc, acc, conds))
    tz.clear_tape()


# ------------------------------------------------------- stream layouts


def test_single_stream_row_layout():
    cfg = tiny_config(single_stream=True)
    model = Predictor(cfg, seed=12)
    assert cfg.track_width == cfg.dim
    voc = np.array([[1, 2, 3]])
    acc = np.array([[7, 8, 9]])
    conds = [Condition(0, np.array([1, 2]))]
    x = encode_tokens(model, voc, acc, conds)
    assert x.x.shape == (1, N_PREFIX + 6, cfg.dim)
    np.testing.assert_allclose(
        x.x.data[0, N_PREFIX : N_PREFIX + 3], model.params["emb.voc"].data[[1, 2, 3]]
    )
    np.testing.assert_allclose(
        x.x.data[0, N_PREFIX + 3 :], model.params["emb.acc"].data[[7, 8, 9]]
    )
    out = forward(model, x)
    assert out.logits.shape == (1, 3, cfg.n_acc)
    tz.clear_tape()


def test_single_stream_readout_is_over_acc_rows():
    # perturbing a vocal token must change logits, confirming the readout
    # rows still attend across the vocal block
    cfg = tiny_config(single_stream=True)
    model = Predictor(cfg, seed=13)
    rng = np.random.default_rng(14)
    voc, acc, conds = make_batch(rng, 1, 4, cfg)
    base = forward(model, encode_tokens(model, voc, acc, conds)).logits.data.copy()
    tz.clear_tape()
    voc2 = voc.copy()
    voc2[0, 0] = (voc2[0, 0] + 1) % cfg.n_vocal
    bumped = forward(model, encode_tokens(model, voc2, acc, conds)).logits.data
    tz.clear_tape()
    assert np.abs(base - bumped).max() > 0


def test_dual_and_single_stream_disagree():
    rng = np.random.default_rng(15)
    cfg_d = tiny_config()
    cfg_s = tiny_config(single_stream=True)
    voc = rng.integers(0, cfg_d.n_vocal, size=(1, 4))
    acc = rng.integers(0, cfg_d.n_acc, size=(1, 4))
    conds = [Condition(1, np.array([3]))]
    out_d = forward(
        Predictor(cfg_d, seed=16), encode_tokens(Predictor(cfg_d, seed=16), voc, acc, conds)
    )
    assert out_d.logits.shape == (1, 4, cfg_d.n_acc)
    tz.clear_tape()
    model_s = Predictor(cfg_s, seed=16)
    out_s = forward(model_s, encode_tokens(model_s, voc, acc, conds))
    assert out_s.logits.shape == (1, 4, cfg_s.n_acc)
    tz.clear_tape()


# ----------------------------------------------------- gradient spot check


def spot_check_param(model, name, idxs, loss_fn, h=1e-5, tol=1e-4):
    tz.clear_tape()
    model.zero_grad()
    tz.backward(loss_fn())
    grad = model.params[name].grad
    assert grad is not None, f"{name}: no gradient reached this parameter"
    grad = grad.copy()
    tz.clear_tape()
    data = model.params[name].data
    for idx in idxs:
        orig = data[idx]
        data[idx] = orig + h
        up = float(loss_fn().data)
        tz.clear_tape()
        data[idx] = orig - h
        down = float(loss_fn().data)
        tz.clear_tape()
        data[idx] = orig
        fd = (up - down) / (2 * h)
        denom = max(abs(fd), abs(grad[idx]), 1e-8)
        assert abs(fd - grad[idx]) / denom < tol, (
            f"{name}{idx}: finite diff {fd} vs analytic {grad[idx]}"
        )


def test_model_gradient_spot_check():
    cfg = tiny_config()
    model = Predictor(cfg, seed=17)
    rng = np.random.default_rng(18)
    voc, acc, conds = make_batch(rng, 2, 3, cfg)
    w_logit = rng.normal(size=(2, 3, cfg.n_acc))
    w_rtd = rng.normal(size=(2, 3))

    def loss_fn():
        out = forward(model, encode_tokens(model, voc, acc, conds))
        return tz.weighted_sum(out.logits, w_logit) + tz.weighted_sum(out.rtd_prob, w_rtd)

    picks = {
        "emb.voc": [(voc[0, 0], 0), (voc[1, 2], 3)],
        "emb.acc": [(acc[0, 1], 2)],
        "prefix.ref_w": [(0, 0), (3, 5)],
        "pos": [(0, 0), (N_PREFIX + 1, 7)],
        "block0.attn.w_qkv": [(0, 0), (5, 20)],
        "block0.ffn.b1": [(0,), (9,)],
        "block0.ln2.g": [(4,)],
        "final_ln.b": [(2,)],
        "head.logit_w": [(1, 1)],
        "head.rtd_w": [(6, 0)],
    }
    for name, idxs in picks.items():
        spot_check_param(model, name, idxs, loss_fn)


def test_ar_gradient_spot_check():
    cfg = tiny_config()
    model = Predictor(cfg, seed=19)
    rng = np.random.default_rng(20)
    voc, acc, conds = make_batch(rng, 1, 3, cfg)
    w = rng.normal(size=(1, 3, cfg.n_acc))

    def loss_fn():
        out = ar_forward(model, encode_tokens(model, voc, acc, conds))
        return tz.weighted_sum(out.logits, w)

    spot_check_param(model, "block0.attn.w_out", [(0, 0), (7, 7)], loss_fn)
    spot_check_param(model, "head.logit_b", [(0,), (5,)], loss_fn)
