"""Randomized three-band EQ and loudness normalization for training audio.

Filters are textbook RBJ biquads (low shelf, peaking, high shelf) applied
in series with scipy's direct-form implementation, then a single linear
gain takes the result to a -16 dBFS RMS target with a -1 dBFS peak cap.
Every stage is pure float64 in, float64 out; randomness comes only from
the generator handed in.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.io import wavfile

log = logging.getLogger(__name__)

DEFAULT_RATE = 48000
TARGET_RMS = 10.0 ** (-16.0 / 20.0)
PEAK_CAP = 10.0 ** (-1.0 / 20.0)

# gain_db, f0 (Hz), Q ranges for each band
BASS_GAIN = (-6.0, 6.0)
BASS_F0 = (60.0, 250.0)
BASS_Q = (0.5, 1.0)
MID_GAIN = (-6.0, 6.0)
MID_F0 = (250.0, 4000.0)
MID_Q = (0.5, 2.0)
TREBLE_GAIN = (-6.0, 6.0)
TREBLE_F0 = (4000.0, 12000.0)
TREBLE_Q = (0.5, 1.0)


@dataclass
class AudioBuffer:
    samples: np.ndarray
    rate: int = DEFAULT_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(
                f"AudioBuffer: expected mono 1-D samples, got shape {self.samples.shape}"
            )
        if self.rate <= 0:
            raise ValueError(f"AudioBuffer: rate must be positive, got {self.rate}")


@dataclass
class AugParams:
    bass_gain_db: float
    bass_f0: float
    bass_q: float
    mid_gain_db: float
    mid_f0: float
    mid_q: float
    treble_gain_db: float
    treble_f0: float
    treble_q: float

    def to_line(self):
        return " ".join(
            f"{k}={v:.17g}" for k, v in self.__dict__.items()
        )


def sample_aug_params(rng):
    def u(lo_hi):
        return float(rng.uniform(lo_hi[0], lo_hi[1]))

    return AugParams(
        bass_gain_db=u(BASS_GAIN),
        bass_f0=u(BASS_F0),
        bass_q=u(BASS_Q),
        mid_gain_db=u(MID_GAIN),
        mid_f0=u(MID_F0),
        mid_q=u(MID_Q),
        treble_gain_db=u(TREBLE_GAIN),
        treble_f0=u(TREBLE_F0),
        treble_q=u(TREBLE_Q),
    )


def biquad_coeffs(kind, gain_db, f0, q, rate):
    """Normalized (b0, b1, b2, a1, a2) for one second-order section.

    Zero gain short-circuits to the exact identity filter so an
    all-zero-gain chain is a true no-op.
    """
    if kind not in ("low_shelf", "peaking", "high_shelf"):
        raise ValueError(f"biquad_coeffs: unknown kind {kind!r}")
    if not 0.0 < f0 < rate / 2.0:
        raise ValueError(
            f"biquad_coeffs: f0 must lie in (0, rate/2), got f0={f0} rate={rate}"
        )
    if q <= 0.0:
        raise ValueError(f"biquad_coeffs: Q must be positive, got {q}")
    if gain_db == 0.0:
        return (1.0, 0.0, 0.0, 0.0, 0.0)

    amp = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * f0 / rate
    cw = math.cos(w0)
    alpha = math.sin(w0) / (2.0 * q)
    sq = 2.0 * math.sqrt(amp) * alpha

    if kind == "peaking":
        b0 = 1.0 + alpha * amp
        b1 = -2.0 * cw
        b2 = 1.0 - alpha * amp
        a0 = 1.0 + alpha / amp
        a1 = -2.0 * cw
        a2 = 1.0 - alpha / amp
    elif kind == "low_shelf":
        b0 = amp * ((amp + 1.0) - (amp - 1.0) * cw + sq)
        b1 = 2.0 * amp * ((amp - 1.0) - (amp + 1.0) * cw)
        b2 = amp * ((amp + 1.0) - (amp - 1.0) * cw - sq)
        a0 = (amp + 1.0) + (amp - 1.0) * cw + sq
        a1 = -2.0 * ((amp - 1.0) + (amp + 1.0) * cw)
        a2 = (amp + 1.0) + (amp - 1.0) * cw - sq
    else:
        b0 = amp * ((amp + 1.0) + (amp - 1.0) * cw + sq)
        b1 = -2.0 * amp * ((amp - 1.0) + (amp + 1.0) * cw)
        b2 = amp * ((amp + 1.0) + (amp - 1.0) * cw - sq)
        a0 = (amp + 1.0) - (amp - 1.0) * cw + sq
        a1 = 2.0 * ((amp - 1.0) - (amp + 1.0) * cw)
        a2 = (amp + 1.0) - (amp - 1.0) * cw - sq

    return (b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0)


def biquad_response(coeffs, freq, rate):
    """Complex frequency response H(e^{jw}) of one normalized section."""
    b0, b1, b2, a1, a2 = coeffs
    z = np.exp(-1j * 2.0 * np.pi * np.asarray(freq, dtype=np.float64) / rate)
    return (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)


def apply_biquad(samples, coeffs):
    b0, b1, b2, a1, a2 = coeffs
    return signal.lfilter([b0, b1, b2], [1.0, a1, a2], np.asarray(samples, np.float64))


def apply_filter_chain(buf, params):
    """Bass shelf, mid peak, treble shelf in series."""
    chain = [
        biquad_coeffs("low_shelf", params.bass_gain_db, params.bass_f0, params.bass_q, buf.rate),
        biquad_coeffs("peaking", params.mid_gain_db, params.mid_f0, params.mid_q, buf.rate),
        biquad_coeffs("high_shelf", params.treble_gain_db, params.treble_f0, params.treble_q, buf.rate),
    ]
    x = buf.samples
    for coeffs in chain:
        x = apply_biquad(x, coeffs)
    return AudioBuffer(x, buf.rate)


def loudness_normalize(buf, target_rms=TARGET_RMS, peak_cap=PEAK_CAP):
    """One linear gain to the RMS target, reduced if the peak would clip."""
    x = buf.samples
    if x.size == 0:
        log.warning("loudness_normalize: empty buffer left unchanged")
        return AudioBuffer(x.copy(), buf.rate)
    rms = float(np.sqrt(np.mean(x * x)))
    if rms < 1e-12:
        log.warning("loudness_normalize: silent buffer left unchanged (rms=%g)", rms)
        return AudioBuffer(x.copy(), buf.rate)
    gain = target_rms / rms
    peak = float(np.max(np.abs(x)))
    if peak * gain > peak_cap:
        gain = peak_cap / peak
    return AudioBuffer(x * gain, buf.rate)


def maybe_augment(buf, p, rng):
    """With probability p, filter with fresh random EQ, then normalize.

    Returns (buffer, applied, params); params is None when the draw skips
    the EQ and only normalization ran.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"maybe_augment: p must be in [0, 1], got {p}")
    if rng.random() < p:
        params = sample_aug_params(rng)
        out = loudness_normalize(apply_filter_chain(buf, params))
        return out, True, params
    return loudness_normalize(buf), False, None


# ------------------------------------------------------------------- I/O


def read_wav(path):
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"read_wav: unsupported sample dtype {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioBuffer(samples, int(rate))


def write_wav(path, buf, pcm16=False):
    if pcm16:
        clipped = np.clip(buf.samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, buf.rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        wavfile.write(path, buf.rate, buf.samples.astype(np.float32))


def read_raw(path, rate):
    samples = np.fromfile(path, dtype=np.float32).astype(np.float64)
    return AudioBuffer(samples, rate)


def write_raw(path, buf):
    buf.samples.astype(np.float32).tofile(path)
