"""Signal analysis and preprocessing.

Octave filtering, Schroeder backward integration, reverberation-time
estimation, 48->16 kHz resampling, SNR-controlled noise injection and the
fixed-length input-vector preparation for the regressors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import BAND_CENTERS, N_BANDS
from .simulator import Rir

TARGET_RATE = 16_000
SOURCE_RATE = 48_000
INPUT_LENGTH = 8_000  # 500 ms at 16 kHz
DEFAULT_SNR_DB = 30.0


class DspError(ValueError):
    pass


class SampleRateError(DspError):
    pass


class UndefinedCurveError(DspError):
    pass


class InsufficientDecayError(DspError):
    pass


def _band_sos(sample_rate: int):
    nyq = sample_rate / 2.0
    top_edge = BAND_CENTERS[-1] * math.sqrt(2.0)
    if nyq <= top_edge:
        raise SampleRateError(
            f"sample rate {sample_rate} too low: {BAND_CENTERS[-1]:.0f} Hz band "
            f"needs Nyquist above {top_edge:.0f} Hz")
    return [signal.butter(3, [fc / math.sqrt(2.0), fc * math.sqrt(2.0)],
                          btype="bandpass", fs=sample_rate, output="sos")
            for fc in BAND_CENTERS]


def octave_filter_bank(rir: Rir) -> np.ndarray:
    """Zero-phase 3rd-order Butterworth band splits, shape (6, n_samples)."""
    sos_list = _band_sos(rir.sample_rate)
    return np.stack([signal.sosfiltfilt(sos, rir.samples) for sos in sos_list])


@dataclass
class SchroederCurve:
    """Backward-integrated energy decay for one band."""

    linear: np.ndarray  # EDC[n] = sum_{m>=n} x[m]^2
    db: np.ndarray  # 10*log10(EDC/EDC[0])
    sample_rate: int


def backward_integrate(band_signal: np.ndarray, sample_rate: int) -> SchroederCurve:
    x = np.asarray(band_signal, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DspError("non-finite band signal")
    edc = np.cumsum((x * x)[::-1])[::-1]
    if edc[0] <= 0.0:
        raise UndefinedCurveError("all-zero signal has no decay curve")
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(edc / edc[0])
    return SchroederCurve(linear=edc, db=db, sample_rate=sample_rate)


@dataclass
class RtEstimate:
    rt: float  # seconds
    start_db: float
    depth_db: float
    fit_quality: float  # R^2 of the line fit inside the dynamic window


def _first_crossing(db: np.ndarray, level: float) -> int:
    """Index of the first sample at or below ``level`` dB."""
    below = np.nonzero(db <= level)[0]
    if below.size == 0:
        raise InsufficientDecayError(f"curve never reaches {level:.1f} dB")
    return int(below[0])


def estimate_rt(curve: SchroederCurve, depth_db: float = 30.0,
                start_db: float = 5.0) -> RtEstimate:
    """Reverberation time from the Schroeder-curve slope.

    Least-squares line on the dB curve between the first crossings of
    -start_db and -(start_db + depth_db); RT = -60 / slope.
    """
    i0 = _first_crossing(curve.db, -start_db)
    i1 = _first_crossing(curve.db, -start_db - depth_db)
    if i1 <= i0:
        raise InsufficientDecayError("decay window is empty")
    t = np.arange(i0, i1 + 1) / curve.sample_rate
    y = curve.db[i0:i1 + 1]
    slope, intercept = np.polyfit(t, y, 1)
    if slope >= 0.0:
        raise InsufficientDecayError("non-decaying fit window")
    resid = y - (slope * t + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return RtEstimate(rt=-60.0 / slope, start_db=start_db, depth_db=depth_db,
                      fit_quality=float(r2))


def _decimation_filter() -> np.ndarray:
    # Kaiser low-pass: cutoff 7.2 kHz, >=80 dB stop-band well inside the
    # 8 kHz output Nyquist (600 Hz transition width)
    nyq = SOURCE_RATE / 2.0
    numtaps, beta = signal.kaiserord(80.0, 600.0 / nyq)
    numtaps |= 1  # odd length keeps the group delay at an integer offset
    return signal.firwin(numtaps, 7200.0, window=("kaiser", beta), fs=SOURCE_RATE)


_DECIM_TAPS = None


def resample_48_to_16(rir: Rir) -> Rir:
    """Factor-3 decimation with an 80 dB anti-alias Kaiser FIR."""
    global _DECIM_TAPS
    if rir.sample_rate != SOURCE_RATE:
        raise SampleRateError(f"expected {SOURCE_RATE} Hz input, got {rir.sample_rate}")
    if _DECIM_TAPS is None:
        _DECIM_TAPS = _decimation_filter()
    out = signal.resample_poly(rir.samples, 1, 3, window=_DECIM_TAPS)
    return Rir(out, TARGET_RATE)


def add_noise_snr(rir: Rir, snr_db: float, rng: np.random.Generator) -> Rir:
    """Add white Gaussian noise at the requested SNR (powers over the signal)."""
    if math.isinf(snr_db):
        return Rir(rir.samples.copy(), rir.sample_rate)
    power = float(np.mean(rir.samples ** 2))
    if power <= 0.0:
        raise DspError("zero-power signal: SNR undefined")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    noise = sigma * rng.standard_normal(rir.samples.shape)
    return Rir(rir.samples + noise, rir.sample_rate)


def preprocess(rir: Rir, snr_db: float = DEFAULT_SNR_DB,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """48 kHz RIR -> 8,000-sample normalized input vector at 16 kHz.

    Resample, truncate/zero-pad to 500 ms, add noise at ``snr_db`` (powers
    measured over the retained window), then peak-normalize to max |x| = 1.
    """
    low = resample_48_to_16(rir)
    x = low.samples[:INPUT_LENGTH]
    if x.size < INPUT_LENGTH:
        x = np.pad(x, (0, INPUT_LENGTH - x.size))
    noisy = add_noise_snr(Rir(x, TARGET_RATE),
                          snr_db, rng if rng is not None else np.random.default_rng())
    peak = np.max(np.abs(noisy.samples))
    if peak <= 0.0:
        raise DspError("zero signal after preprocessing")
    return noisy.samples / peak


def export_schroeder_curves(curves: list[SchroederCurve], path) -> None:
    """Tabular text export (time_s, per-band dB) for plotting."""
    n = min(c.db.size for c in curves)
    fs = curves[0].sample_rate
    with open(path, "w") as f:
        f.write("time_s\t" + "\t".join(f"db{int(c)}" for c in BAND_CENTERS[:len(curves)]) + "\n")
        for i in range(n):
            f.write(f"{i / fs:.6f}\t" + "\t".join(f"{c.db[i]:.4f}" for c in curves) + "\n")
