"""Classical mean-absorption estimators.

Sabine and Eyring formulas on Schroeder-integrated decay, the full
RIR -> alpha pipeline, linear-decay screening of Schroeder curves and
median aggregation of multiple estimates into a per-room reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .core import N_BANDS, RoomGeometry
from .dsp import (InsufficientDecayError, RtEstimate, SchroederCurve,
                  backward_integrate, estimate_rt, octave_filter_bank)
from .simulator import Rir

SCREENING_R2_THRESHOLD = 0.985


class EyringDomainError(ValueError):
    """Sabine estimate >= 1: Eyring's logarithm is undefined."""


def sabine(volume: float, surface: float, rt: float) -> float:
    """Sabine's formula: 0.163 * V / (S * RT)."""
    if volume <= 0 or surface <= 0 or rt <= 0:
        raise ValueError(f"V, S, RT must be positive: {volume}, {surface}, {rt}")
    return 0.163 * volume / (surface * rt)


def eyring(alpha_sabine: float) -> float:
    """Eyring's correction: -ln(1 - alpha_Sabine); undefined at >= 1."""
    if alpha_sabine >= 1.0:
        raise EyringDomainError(f"Sabine estimate {alpha_sabine:.4f} >= 1")
    return -math.log(1.0 - alpha_sabine)


@dataclass
class BandEstimate:
    alpha: Optional[float]  # None when the band is unavailable
    rt_used: Optional[RtEstimate]
    error: Optional[str] = None


@dataclass
class ClassicalEstimate:
    method: Literal["sabine", "eyring"]
    bands: list[BandEstimate]
    volume: float
    surface: float

    def alpha_array(self) -> np.ndarray:
        """Per-band values with NaN for unavailable bands."""
        return np.array([b.alpha if b.alpha is not None else np.nan for b in self.bands])

    @property
    def available(self) -> np.ndarray:
        return np.array([b.alpha is not None for b in self.bands])


def estimate_alpha_classical(rir: Rir, geometry: RoomGeometry,
                             depth_db: float = 30.0,
                             method: Literal["sabine", "eyring"] = "eyring"
                             ) -> ClassicalEstimate:
    """Octave filter -> Schroeder curve -> RT -> Sabine (-> Eyring) per band.

    Bands where the decay is insufficient or Eyring's domain is violated are
    marked unavailable with the error message, never silently filled.
    """
    v = geometry.volume
    s = geometry.total_surface
    bands = []
    for band_signal in octave_filter_bank(rir):
        try:
            curve = backward_integrate(band_signal, rir.sample_rate)
            rt = estimate_rt(curve, depth_db=depth_db)
            alpha = sabine(v, s, rt.rt)
            if method == "eyring":
                alpha = eyring(alpha)
            bands.append(BandEstimate(alpha=alpha, rt_used=rt))
        except (InsufficientDecayError, EyringDomainError, ValueError) as exc:
            bands.append(BandEstimate(alpha=None, rt_used=None, error=str(exc)))
    return ClassicalEstimate(method=method, bands=bands, volume=v, surface=s)


def classify_schroeder(curve: SchroederCurve) -> str:
    """'A' iff the curve reaches -15 dB and fits a line on [-5, -15] dB with
    R^2 >= 0.985, else 'B'."""
    try:
        fit = estimate_rt(curve, depth_db=10.0)
    except InsufficientDecayError:
        return "B"
    return "A" if fit.fit_quality >= SCREENING_R2_THRESHOLD else "B"


class EmptyReferenceBandError(ValueError):
    """No screened-in estimates are available for a band."""


@dataclass
class ReferenceAggregate:
    alpha_ref: list[float]  # per band
    counts: list[int]  # number of estimates used per band


def aggregate_reference(estimates: Sequence[ClassicalEstimate],
                        screening: Sequence[Sequence[str]]) -> ReferenceAggregate:
    """Median Eyring estimate per band over measurements screened into 'A'.

    ``screening[i][b]`` is the A/B flag of estimate i in band b.  Raises
    :class:`EmptyReferenceBandError` when a band has no usable A estimates.
    """
    if len(estimates) != len(screening):
        raise ValueError("screening flags must align with estimates")
    alpha_ref: list[float] = []
    counts: list[int] = []
    for b in range(N_BANDS):
        vals = [est.bands[b].alpha
                for est, flags in zip(estimates, screening)
                if flags[b] == "A" and est.bands[b].alpha is not None]
        if not vals:
            raise EmptyReferenceBandError(f"no A-screened estimates in band {b}")
        counts.append(len(vals))
        alpha_ref.append(float(np.median(vals)))
    return ReferenceAggregate(alpha_ref=alpha_ref, counts=counts)
