"""Three-band EQ, loudness normalization, and audio file round trips."""

import math

import numpy as np
import pytest
from scipy.io import wavfile

from duetdiff.audio_aug import (
    BASS_F0,
    BASS_GAIN,
    BASS_Q,
    MID_F0,
    MID_GAIN,
    MID_Q,
    PEAK_CAP,
    TARGET_RMS,
    TREBLE_F0,
    TREBLE_GAIN,
    TREBLE_Q,
    AudioBuffer,
    AugParams,
    apply_biquad,
    apply_filter_chain,
    biquad_coeffs,
    biquad_response,
    loudness_normalize,
    maybe_augment,
    read_raw,
    read_wav,
    sample_aug_params,
    write_raw,
    write_wav,
)

RATE = 48000


def db(h):
    return 20.0 * math.log10(abs(h))


def flat_params():
    return AugParams(0.0, 100.0, 0.7, 0.0, 1000.0, 1.0, 0.0, 8000.0, 0.7)


def tone(freq, n=4096, rate=RATE, amp=0.5):
    t = np.arange(n) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


# ---------------------------------------------------------------- biquads


def test_zero_gain_is_exact_identity():
    for kind in ("low_shelf", "peaking", "high_shelf"):
        assert biquad_coeffs(kind, 0.0, 1000.0, 0.7, RATE) == (1.0, 0.0, 0.0, 0.0, 0.0)
    x = np.random.default_rng(0).normal(size=2000)
    out = apply_filter_chain(AudioBuffer(x, RATE), flat_params())
    np.testing.assert_array_equal(out.samples, x)


def test_peaking_gain_at_center_frequency():
    for gain in (6.0, -6.0, 2.5):
        c = biquad_coeffs("peaking", gain, 1000.0, 1.0, RATE)
        assert abs(db(biquad_response(c, 1000.0, RATE)) - gain) < 0.01
        # far from the peak the response returns to unity
        assert abs(db(biquad_response(c, 10.0, RATE))) < 0.05
        assert abs(db(biquad_response(c, 23000.0, RATE))) < 0.05


def test_low_shelf_band_edges():
    gain = -5.0
    c = biquad_coeffs("low_shelf", gain, 200.0, 0.7071, RATE)
    assert abs(db(biquad_response(c, 0.0, RATE)) - gain) < 1e-9
    assert abs(db(biquad_response(c, RATE / 2.0, RATE))) < 1e-9
    # the shelf crosses half its dB gain at f0
    assert abs(db(biquad_response(c, 200.0, RATE)) - gain / 2) < 1e-6
    assert abs(db(biquad_response(c, 200.0 / 16, RATE)) - gain) < 0.01


def test_high_shelf_band_edges():
    gain = 4.0
    c = biquad_coeffs("high_shelf", gain, 8000.0, 0.7071, RATE)
    assert abs(db(biquad_response(c, 0.0, RATE))) < 1e-9
    assert abs(db(biquad_response(c, RATE / 2.0, RATE)) - gain) < 1e-9
    assert abs(db(biquad_response(c, 8000.0, RATE)) - gain / 2) < 1e-6


def test_biquad_validation():
    with pytest.raises(ValueError, match="unknown kind"):
        biquad_coeffs("notch", 3.0, 1000.0, 0.7, RATE)
    with pytest.raises(ValueError, match="f0"):
        biquad_coeffs("peaking", 3.0, RATE / 2.0, 0.7, RATE)
    with pytest.raises(ValueError, match="f0"):
        biquad_coeffs("peaking", 3.0, 0.0, 0.7, RATE)
    with pytest.raises(ValueError, match="Q"):
        biquad_coeffs("peaking", 3.0, 1000.0, 0.0, RATE)


def test_poles_stable_across_documented_ranges():
    bands = [
        ("low_shelf", BASS_GAIN, BASS_F0, BASS_Q),
        ("peaking", MID_GAIN, MID_F0, MID_Q),
        ("high_shelf", TREBLE_GAIN, TREBLE_F0, TREBLE_Q),
    ]
    for kind, g_rng, f_rng, q_rng in bands:
        for gain in (g_rng[0], -1.0, 1.0, g_rng[1]):
            for f0 in np.linspace(f_rng[0], f_rng[1], 5):
                for q in (q_rng[0], q_rng[1]):
                    c = biquad_coeffs(kind, gain, float(f0), float(q), RATE)
                    roots = np.roots([1.0, c[3], c[4]])
                    assert np.all(np.abs(roots) < 1.0), (kind, gain, f0, q)


def test_filter_is_linear():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=1000), rng.normal(size=1000)
    c = biquad_coeffs("peaking", 4.0, 1000.0, 1.0, RATE)
    mixed = apply_biquad(2.0 * x - 3.0 * y, c)
    np.testing.assert_allclose(
        mixed, 2.0 * apply_biquad(x, c) - 3.0 * apply_biquad(y, c), atol=1e-12
    )


def test_chain_attenuates_band_tone():
    params = flat_params()
    params.mid_gain_db = -6.0
    out = apply_filter_chain(tone(1000.0), params)
    before = float(np.sqrt(np.mean(tone(1000.0).samples ** 2)))
    after = float(np.sqrt(np.mean(out.samples[1000:] ** 2)))  # past the transient
    assert abs(20 * math.log10(after / before) + 6.0) < 0.1


# ---------------------------------------------------------- normalization


def test_rms_normalization_hits_target():
    out = loudness_normalize(tone(440.0))
    rms = float(np.sqrt(np.mean(out.samples**2)))
    assert abs(rms - TARGET_RMS) < 1e-9
    assert abs(20 * math.log10(rms) + 16.0) < 1e-6


def test_peak_cap_limits_gain():
    x = np.zeros(4000)
    x[::500] = 0.9  # sparse spikes: tiny rms, big peak
    out = loudness_normalize(AudioBuffer(x, RATE))
    assert abs(np.max(np.abs(out.samples)) - PEAK_CAP) < 1e-12
    assert float(np.sqrt(np.mean(out.samples**2))) < TARGET_RMS


def test_silent_and_empty_buffers_pass_through(caplog):
    import logging

    with caplog.at_level(logging.WARNING):
        silent = loudness_normalize(AudioBuffer(np.zeros(64), RATE))
        empty = loudness_normalize(AudioBuffer(np.zeros(0), RATE))
    np.testing.assert_array_equal(silent.samples, np.zeros(64))
    assert empty.samples.size == 0
    assert sum("unchanged" in rec.message for rec in caplog.records) == 2


def test_buffer_validation():
    with pytest.raises(ValueError, match="mono"):
        AudioBuffer(np.zeros((4, 2)), RATE)
    with pytest.raises(ValueError, match="rate"):
        AudioBuffer(np.zeros(4), 0)


# -------------------------------------------------------------- maybe_augment


def test_maybe_augment_activation_rate():
    rng = np.random.default_rng(2)
    buf = AudioBuffer(np.array([0.5, -0.25, 0.3, -0.4]), RATE)
    n = 4000
    applied = 0
    for _ in range(n):
        out, flag, params = maybe_augment(buf, 0.7, rng)
        applied += flag
        assert (params is not None) == flag
        assert out.samples.shape == buf.samples.shape
    sigma = math.sqrt(0.7 * 0.3 / n)
    assert abs(applied / n - 0.7) < 4 * sigma


def test_maybe_augment_always_normalizes():
    buf = tone(440.0, n=2000)
    out, flag, params = maybe_augment(buf, 0.0, np.random.default_rng(3))
    assert not flag and params is None
    rms = float(np.sqrt(np.mean(out.samples**2)))
    assert abs(rms - TARGET_RMS) < 1e-9


def test_maybe_augment_validates_p():
    with pytest.raises(ValueError, match="p must be"):
        maybe_augment(tone(440.0, n=8), 1.5, np.random.default_rng(4))


def test_sampled_params_respect_ranges():
    rng = np.random.default_rng(5)
    for _ in range(200):
        p = sample_aug_params(rng)
        assert BASS_GAIN[0] <= p.bass_gain_db <= BASS_GAIN[1]
        assert BASS_F0[0] <= p.bass_f0 <= BASS_F0[1]
        assert BASS_Q[0] <= p.bass_q <= BASS_Q[1]
        assert MID_GAIN[0] <= p.mid_gain_db <= MID_GAIN[1]
        assert MID_F0[0] <= p.mid_f0 <= MID_F0[1]
        assert MID_Q[0] <= p.mid_q <= MID_Q[1]
        assert TREBLE_GAIN[0] <= p.treble_gain_db <= TREBLE_GAIN[1]
        assert TREBLE_F0[0] <= p.treble_f0 <= TREBLE_F0[1]
        assert TREBLE_Q[0] <= p.treble_q <= TREBLE_Q[1]
    line = p.to_line()
    assert line.startswith("bass_gain_db=") and "treble_q=" in line


# --------------------------------------------------------------------- I/O


def test_wav_float_roundtrip(tmp_path):
    buf = tone(440.0, n=400)
    path = tmp_path / "t.wav"
    write_wav(path, buf)
    back = read_wav(path)
    assert back.rate == RATE
    np.testing.assert_allclose(back.samples, buf.samples, atol=1e-7)


def test_wav_pcm16_roundtrip(tmp_path):
    buf = tone(440.0, n=400)
    path = tmp_path / "t16.wav"
    write_wav(path, buf, pcm16=True)
    back = read_wav(path)
    np.testing.assert_allclose(back.samples, buf.samples, atol=1.0 / 32768.0)


def test_wav_stereo_downmix(tmp_path):
    path = tmp_path / "st.wav"
    left = np.full(100, 8192, dtype=np.int16)
    right = np.full(100, 16384, dtype=np.int16)
    wavfile.write(path, RATE, np.stack([left, right], axis=1))
    back = read_wav(path)
    np.testing.assert_allclose(back.samples, np.full(100, 12288.0 / 32768.0), atol=1e-12)


def test_raw_roundtrip(tmp_path):
    buf = tone(100.0, n=256, rate=16000)
    path = tmp_path / "t.raw"
    write_raw(path, buf)
    back = read_raw(path, 16000)
    assert back.rate == 16000
    np.testing.assert_allclose(back.samples, buf.samples, atol=1e-7)
