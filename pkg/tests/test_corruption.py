"""Forward masking statistics and replaced-token corruption contracts."""

import numpy as np
import pytest
from scipy import stats

from duetdiff.corruption import TokenSeq, mask_forward, rtd_corrupt


def clean_seq(tokens, n_real=8, mask_id=8, pad_id=9):
    return TokenSeq(np.asarray(tokens, dtype=np.int64), n_real, mask_id=mask_id, pad_id=pad_id)


# ------------------------------------------------------------ TokenSeq


def test_pads_must_be_suffix():
    with pytest.raises(ValueError, match="suffix"):
        clean_seq([1, 9, 2, 9])
    seq = clean_seq([1, 2, 9, 9])
    assert seq.nonpad_length() == 2


def test_validate_clean_rejects_specials():
    seq = clean_seq([1, 8, 2])
    with pytest.raises(ValueError):
        seq.validate_clean()


# --------------------------------------------------------- mask_forward


def test_mask_fraction_within_3_sigma():
    # 1e5 Bernoulli draws per t; empirical fraction within 3 sigma
    n = 100_000
    seq = clean_seq(np.zeros(n, dtype=np.int64), n_real=8)
    for t in (0.1, 0.5, 0.9):
        rec = mask_forward(seq, t, np.random.default_rng(int(t * 1000)))
        frac = rec.mask_set.mean()
        sigma = np.sqrt(t * (1 - t) / n)
        assert abs(frac - t) < 3 * sigma, f"t={t}: {frac} vs {t} (3s={3*sigma})"


def test_mask_then_restore_identity():
    rng = np.random.default_rng(7)
    tokens = rng.integers(0, 8, size=64)
    seq = clean_seq(tokens)
    rec = mask_forward(seq, 0.5, rng)
    restored = rec.seq.tokens.copy()
    restored[rec.mask_set] = tokens[rec.mask_set]
    np.testing.assert_array_equal(restored, tokens)


def test_mask_never_touches_pads():
    tokens = np.array([1, 2, 3, 9, 9], dtype=np.int64)
    seq = clean_seq(tokens)
    for trial in range(50):
        rec = mask_forward(seq, 0.99, np.random.default_rng(trial))
        assert not rec.mask_set[3:].any()
        assert (rec.seq.tokens[3:] == 9).all()


def test_mask_t_domain():
    seq = clean_seq([1, 2, 3])
    with pytest.raises(ValueError):
        mask_forward(seq, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mask_forward(seq, 1.5, np.random.default_rng(0))
    rec = mask_forward(seq, 1.0, np.random.default_rng(0))
    assert rec.mask_set.all()


def test_mask_input_unchanged():
    tokens = np.arange(8) % 8
    seq = clean_seq(tokens)
    mask_forward(seq, 0.7, np.random.default_rng(1))
    np.testing.assert_array_equal(seq.tokens, tokens)


# ---------------------------------------------------------- rtd_corrupt


def test_rtd_exact_replacement_count():
    rng = np.random.default_rng(3)
    for n, rho in ((40, 0.15), (64, 0.25), (10, 0.5), (7, 0.15)):
        tokens = rng.integers(0, 8, size=n)
        seq = clean_seq(tokens)
        out, rtd_set, labels = rtd_corrupt(seq, rho, rng, mode="uniform")
        assert rtd_set.sum() == int(rho * n)
        assert (~labels).sum() == int(rho * n)


def test_rtd_replacement_never_equals_clean_or_special():
    rng = np.random.default_rng(5)
    tokens = rng.integers(0, 8, size=200)
    seq = clean_seq(tokens)
    out, rtd_set, labels = rtd_corrupt(seq, 0.3, rng, mode="uniform")
    changed = out.tokens != tokens
    np.testing.assert_array_equal(changed, rtd_set)
    assert (out.tokens[rtd_set] != tokens[rtd_set]).all()
    assert (out.tokens < 8).all()


def test_rtd_labels_true_iff_token_clean():
    rng = np.random.default_rng(11)
    tokens = rng.integers(0, 8, size=50)
    seq = clean_seq(tokens)
    out, rtd_set, labels = rtd_corrupt(seq, 0.2, rng, mode="uniform")
    np.testing.assert_array_equal(labels, out.tokens == tokens)


def test_rtd_skips_masked_and_pad_positions():
    tokens = np.array([1, 8, 2, 8, 3, 4, 9, 9], dtype=np.int64)
    seq = clean_seq(tokens)
    clean = clean_seq(np.array([1, 5, 2, 6, 3, 4, 9, 9], dtype=np.int64))
    rng = np.random.default_rng(2)
    out, rtd_set, labels = rtd_corrupt(seq, 0.5, rng, mode="uniform", clean=clean)
    # eligible = positions 0,2,4,5 -> floor(0.5*4) = 2 replacements
    assert rtd_set.sum() == 2
    assert not rtd_set[[1, 3, 6, 7]].any()
    assert (out.tokens[[1, 3]] == 8).all()
    assert (out.tokens[[6, 7]] == 9).all()


def test_rtd_uniform_replacements_chi_square():
    # replacements for clean token 0 should be uniform over {1..7}
    rng = np.random.default_rng(13)
    counts = np.zeros(8)
    n_trials = 4000
    seq = clean_seq(np.zeros(20, dtype=np.int64))
    for _ in range(n_trials):
        out, rtd_set, _ = rtd_corrupt(seq, 0.5, rng, mode="uniform")
        for tok in out.tokens[rtd_set]:
            counts[tok] += 1
    assert counts[0] == 0
    chi = stats.chisquare(counts[1:])
    assert chi.pvalue > 0.01


def test_rtd_argmax_picks_top_non_clean():
    tokens = np.array([2, 5], dtype=np.int64)
    seq = clean_seq(tokens)
    logits = np.zeros((2, 8))
    logits[0, 2] = 10.0  # clean is argmax: must fall through to runner-up
    logits[0, 7] = 5.0
    logits[1, 1] = 3.0
    out, rtd_set, _ = rtd_corrupt(seq, 0.99, np.random.default_rng(0), mode="argmax", logits=logits)
    assert rtd_set.sum() == 1  # floor(0.99 * 2)
    i = int(np.flatnonzero(rtd_set)[0])
    expected = {0: 7, 1: 1}[i]
    assert out.tokens[i] == expected


def test_rtd_sample_respects_temperature_and_excludes_clean():
    tokens = np.zeros(1000, dtype=np.int64)
    seq = clean_seq(tokens)
    logits = np.zeros((1000, 8))
    logits[:, 3] = 4.0
    out, rtd_set, _ = rtd_corrupt(
        seq, 0.9, np.random.default_rng(1), mode="sample", logits=logits, temperature=1.0
    )
    replaced = out.tokens[rtd_set]
    assert (replaced != 0).all()
    # token 3 has e^4 the weight of the others: should dominate
    assert (replaced == 3).mean() > 0.8


def test_rtd_mode_validation():
    seq = clean_seq([1, 2, 3])
    with pytest.raises(ValueError, match="mode"):
        rtd_corrupt(seq, 0.1, np.random.default_rng(0), mode="bogus")


def test_rtd_rho_zero_is_identity():
    tokens = np.arange(6) % 8
    seq = clean_seq(tokens)
    out, rtd_set, labels = rtd_corrupt(seq, 0.0, np.random.default_rng(0), mode="uniform")
    np.testing.assert_array_equal(out.tokens, tokens)
    assert not rtd_set.any()
    assert labels.all()
