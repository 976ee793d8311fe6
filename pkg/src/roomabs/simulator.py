"""Hybrid shoebox RIR engine.

Deterministic image-source enumeration provides specular arrivals; a
stochastic "diffuse rain" ray tracer deposits diffuse energy at a point
receiver on every surface collision.  Both arrival streams are converted to a
sampled pressure waveform through fixed per-band minimum-phase FIR kernels.

Geometry convention matches :mod:`roomabs.core`: the box spans
[0, lx] x [0, ly] x [0, lz] and faces are ordered
(floor, ceiling, west, south, east, north) = (z=0, z=lz, x=0, y=0, x=lx, y=ly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import signal

from .core import BAND_CENTERS, N_BANDS, RoomSpec

#: Face index per (axis, side): side 0 is the low plane, side 1 the high one.
FACE_OF_AXIS_SIDE = np.array([
    [2, 4],  # x: west, east
    [3, 5],  # y: south, north
    [0, 1],  # z: floor, ceiling
])

_LOG_FLOOR = -745.0  # exp(-745) underflows to 0 without producing inf*0 NaNs


@dataclass(frozen=True)
class AirSettings:
    temperature_c: float = 20.0
    relative_humidity: float = 0.42  # fraction, not percent
    pressure_kpa: float = 101.325
    enabled: bool = True


@dataclass(frozen=True)
class SimConfig:
    sample_rate: int = 48_000
    n_rays: int = 50_000
    max_image_order: int | None = 50
    max_time: float = 0.5
    air: AirSettings = field(default_factory=AirSettings)
    receiver_radius: float = 0.1
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if self.sample_rate <= 0 or self.n_rays < 0 or self.max_time <= 0:
            raise ValueError(f"invalid simulation config: {self}")

    @classmethod
    def paper(cls, **kw) -> "SimConfig":
        """Full-fidelity profile: 50,000 rays, image sources to order 50."""
        return cls(**kw)

    @classmethod
    def fast(cls, **kw) -> "SimConfig":
        """Desk-scale profile: image order pruned by distance only, 10,000 rays."""
        kw.setdefault("n_rays", 10_000)
        kw.setdefault("max_image_order", None)
        return cls(**kw)

    def without_diffuse(self) -> "SimConfig":
        return replace(self, n_rays=0)


@dataclass
class Echogram:
    """Specular and diffuse arrival streams: times in seconds, per-band energies."""

    specular_times: np.ndarray  # (Ns,)
    specular_energy: np.ndarray  # (Ns, 6)
    diffuse_times: np.ndarray  # (Nd,)
    diffuse_energy: np.ndarray  # (Nd, 6)

    def dump(self, path) -> None:
        """Tabular text dump: stream, time_s, e125 ... e4000."""
        with open(path, "w") as f:
            f.write("stream\ttime_s\t" + "\t".join(f"e{int(c)}" for c in BAND_CENTERS) + "\n")
            for name, t, e in (("specular", self.specular_times, self.specular_energy),
                               ("diffuse", self.diffuse_times, self.diffuse_energy)):
                for ti, ei in zip(t, e):
                    f.write(name + f"\t{ti:.9f}\t" + "\t".join(f"{v:.9e}" for v in ei) + "\n")


@dataclass
class Rir:
    """Sampled pressure waveform."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("RIR contains non-finite samples")


@dataclass
class EnergyLedger:
    """Per-band energy bookkeeping of one diffuse-rain run (unit total emission)."""

    received: np.ndarray  # deposited at the receiver within the time window
    absorbed: np.ndarray  # lost to surface absorption
    air_dissipated: np.ndarray  # lost to atmospheric attenuation
    expired: np.ndarray  # rays that ran past max_time, incl. late deposits
    residual: np.ndarray  # carried by rays killed below the energy threshold

    def total(self) -> np.ndarray:
        return (self.received + self.absorbed + self.air_dissipated
                + self.expired + self.residual)


def iso9613_attenuation_db_per_m(freq_hz, temperature_c: float,
                                 relative_humidity: float,
                                 pressure_kpa: float = 101.325):
    """ISO 9613-1 pure-tone atmospheric attenuation coefficient in dB/m.

    ``relative_humidity`` is a fraction in (0, 1].
    """
    f = np.asarray(freq_hz, dtype=float)
    t_k = temperature_c + 273.15
    t0 = 293.15
    t01 = 273.16
    pr = 101.325
    p = pressure_kpa / pr
    tr = t_k / t0
    # molar concentration of water vapour (percent)
    c_sat = -6.8346 * (t01 / t_k) ** 1.261 + 4.6151
    h = (relative_humidity * 100.0) * (10.0 ** c_sat) / p
    fr_o = p * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h))
    fr_n = p / math.sqrt(tr) * (9.0 + 280.0 * h * math.exp(-4.170 * (tr ** (-1.0 / 3.0) - 1.0)))
    f2 = f * f
    return 8.686 * f2 * (
        1.84e-11 / p * math.sqrt(tr)
        + tr ** -2.5 * (0.01275 * math.exp(-2239.1 / t_k) / (fr_o + f2 / fr_o)
                        + 0.1068 * math.exp(-3352.0 / t_k) / (fr_n + f2 / fr_n))
    )


def air_energy_exponents(config: SimConfig) -> np.ndarray:
    """Per-band exponents m(b) such that the energy factor is exp(-m * distance)."""
    if not config.air.enabled:
        return np.zeros(N_BANDS)
    att_db = iso9613_attenuation_db_per_m(
        np.asarray(BAND_CENTERS), config.air.temperature_c,
        config.air.relative_humidity, config.air.pressure_kpa)
    return att_db * math.log(10.0) / 10.0


def air_attenuation(band_hz: float, distance: float, air: AirSettings) -> float:
    """Energy attenuation factor over ``distance`` meters at one band center."""
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    if not air.enabled:
        return 1.0
    att_db = iso9613_attenuation_db_per_m(
        band_hz, air.temperature_c, air.relative_humidity, air.pressure_kpa)
    return float(np.exp(-att_db * math.log(10.0) / 10.0 * distance))


def _axis_reflection_counts(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reflection counts (low plane, high plane) for 1-D unfolded cell indices."""
    a = np.abs(cells)
    pos = cells > 0
    n_high = np.where(pos, (a + 1) // 2, a // 2)
    n_low = a - n_high
    return n_low, n_high


def enumerate_image_sources(spec: RoomSpec, config: SimConfig
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Mirror-image lattice arrivals: (times (N,), band energies (N, 6)).

    Includes the order-0 direct path; pruned to path length <=
    speed_of_sound * max_time and (if set) to max_image_order reflections.
    Sorted by arrival time.
    """
    dims = np.array([spec.geometry.lx, spec.geometry.ly, spec.geometry.lz])
    src = np.asarray(spec.source)
    rcv = np.asarray(spec.receiver)
    c = config.speed_of_sound
    max_dist = c * config.max_time

    per_axis_pos = []
    per_axis_cells = []
    for ax in range(3):
        n_max = int(math.ceil(max_dist / dims[ax])) + 1
        if config.max_image_order is not None:
            n_max = min(n_max, config.max_image_order)
        cells = np.arange(-n_max, n_max + 1)
        # even cell: n*L + s ; odd cell: (n+1)*L - s
        pos = np.where(cells % 2 == 0, cells * dims[ax] + src[ax],
                       (cells + 1) * dims[ax] - src[ax])
        per_axis_pos.append(pos)
        per_axis_cells.append(cells)

    dx2 = (per_axis_pos[0] - rcv[0]) ** 2
    dy2 = (per_axis_pos[1] - rcv[1]) ** 2
    dz2 = (per_axis_pos[2] - rcv[2]) ** 2
    abs_cells = [np.abs(cells) for cells in per_axis_cells]

    refl = (1.0 - spec.absorption_matrix()) * (1.0 - spec.scattering_matrix())
    log_refl = np.log(np.maximum(refl, 0.0), where=refl > 0,
                      out=np.full_like(refl, _LOG_FLOOR))
    m_air = air_energy_exponents(config)

    # process the lattice in x-slabs to bound peak memory on large windows
    slab_cells = max(1, int(4e6 // (dy2.size * dz2.size)))
    times_parts, energy_parts = [], []
    for lo in range(0, dx2.size, slab_cells):
        sl = slice(lo, lo + slab_cells)
        d2 = dx2[sl][:, None, None] + dy2[None, :, None] + dz2[None, None, :]
        mask = d2 <= max_dist * max_dist
        if config.max_image_order is not None:
            order = (abs_cells[0][sl][:, None, None]
                     + abs_cells[1][None, :, None]
                     + abs_cells[2][None, None, :])
            mask &= order <= config.max_image_order
        ix, iy, iz = np.nonzero(mask)
        if ix.size == 0:
            continue
        dist = np.sqrt(d2[ix, iy, iz])
        dist = np.maximum(dist, 1e-9)  # coincident source/receiver guard

        # reflection counts per face, canonical surface order
        counts = np.empty((dist.size, 6))
        for ax, idx in enumerate((per_axis_cells[0][sl][ix],
                                  per_axis_cells[1][iy], per_axis_cells[2][iz])):
            lo_n, hi_n = _axis_reflection_counts(idx)
            counts[:, FACE_OF_AXIS_SIDE[ax, 0]] = lo_n
            counts[:, FACE_OF_AXIS_SIDE[ax, 1]] = hi_n

        log_energy = counts @ log_refl  # (N, 6 bands)
        energy = np.exp(np.maximum(log_energy - m_air[None, :] * dist[:, None],
                                   _LOG_FLOOR))
        energy /= (dist * dist)[:, None]
        times_parts.append(dist / c)
        energy_parts.append(energy)

    if not times_parts:
        return np.zeros(0), np.zeros((0, N_BANDS))
    times = np.concatenate(times_parts)
    energy = np.concatenate(energy_parts)
    order_sort = np.argsort(times, kind="stable")
    return times[order_sort], energy[order_sort]


def trace_diffuse_rain(spec: RoomSpec, config: SimConfig, rng: np.random.Generator,
                       with_ledger: bool = False):
    """Stochastic diffuse-rain arrivals: (times (N,), band energies (N, 6)).

    Rays start isotropically at the source with per-band energy 1/n_rays each.
    At every surface hit, the scattered fraction aimed at the receiver sphere,
    E*(1-alpha)*s*(cos(theta_r)/pi)*Omega, is deposited; the ray continues
    specularly with the rest of the reflected energy, E*(1-alpha) minus the
    deposit, so the diffusely scattered field stays in the simulation and the
    late decay is governed by absorption alone.  With ``with_ledger`` an
    :class:`EnergyLedger` is returned as third element; the ledger is exact
    (per band, to rounding) in all configurations.
    """
    dims = np.array([spec.geometry.lx, spec.geometry.ly, spec.geometry.lz])
    rcv = np.asarray(spec.receiver)
    c = config.speed_of_sound
    n = config.n_rays
    r_s = config.receiver_radius

    ledger = EnergyLedger(*(np.zeros(N_BANDS) for _ in range(5)))
    if n == 0:
        empty = np.zeros(0), np.zeros((0, N_BANDS))
        return (*empty, ledger) if with_ledger else empty

    alpha = spec.absorption_matrix()
    scat = spec.scattering_matrix()
    m_air = air_energy_exponents(config)

    vel = rng.standard_normal((n, 3))
    norms = np.linalg.norm(vel, axis=1)
    # degenerate zero-norm draws are essentially impossible; nudge if they occur
    norms[norms < 1e-12] = 1.0
    vel /= norms[:, None]
    pos = np.tile(np.asarray(spec.source), (n, 1))
    energy = np.full((n, N_BANDS), 1.0 / n)
    path = np.zeros(n)
    threshold = 1e-6 / n

    times_out: list[np.ndarray] = []
    energies_out: list[np.ndarray] = []
    max_path = c * config.max_time

    while pos.shape[0]:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (0.0 - pos) / vel
            t_hi = (dims[None, :] - pos) / vel
        t_cand = np.where(vel > 0, t_hi, np.where(vel < 0, t_lo, np.inf))
        t_cand = np.maximum(t_cand, 0.0)
        axis = np.argmin(t_cand, axis=1)
        rows = np.arange(pos.shape[0])
        seg = t_cand[rows, axis]

        new_path = path + seg
        expired = new_path > max_path
        if expired.any():
            ledger.expired += energy[expired].sum(axis=0)
            keep = ~expired
            pos, vel, energy, path, axis, seg, new_path = (
                a[keep] for a in (pos, vel, energy, path, axis, seg, new_path))
            rows = np.arange(pos.shape[0])
            if not pos.shape[0]:
                break

        hit = pos + vel * seg[:, None]
        side = (vel[rows, axis] > 0).astype(int)
        face = FACE_OF_AXIS_SIDE[axis, side]
        hit[rows, axis] = side * dims[axis]  # snap onto the plane

        air_seg = np.exp(-np.outer(seg, m_air))
        e_hit = energy * air_seg
        ledger.air_dissipated += (energy - e_hit).sum(axis=0)

        a_f = alpha[face]
        s_f = scat[face]
        to_rcv = rcv[None, :] - hit
        d = np.linalg.norm(to_rcv, axis=1)
        d = np.maximum(d, 1e-9)
        cos_r = np.abs(to_rcv[rows, axis]) / d
        inside = d <= r_s
        with np.errstate(invalid="ignore"):
            omega = 2.0 * math.pi * (1.0 - np.sqrt(np.maximum(1.0 - (r_s / d) ** 2, 0.0)))
        omega[inside] = 2.0 * math.pi
        # Lambert directional density integrated over the receiver solid angle;
        # the point approximation can exceed the whole reflected hemisphere
        # when the receiver sits very close to the wall, so cap the fraction.
        frac = np.minimum((cos_r / math.pi) * omega, 1.0)

        reflected = e_hit * (1.0 - a_f)
        deposit = reflected * s_f * frac[:, None]  # leaves the ray here
        air_rcv = np.exp(-np.outer(d, m_air))
        t_arr = (new_path + d) / c
        in_window = t_arr <= config.max_time
        if in_window.any():
            arrived = deposit[in_window] * air_rcv[in_window]
            nonzero = arrived.max(axis=1) > 0.0
            if nonzero.any():
                times_out.append(t_arr[in_window][nonzero])
                energies_out.append(arrived[nonzero])
            ledger.received += arrived.sum(axis=0)
            ledger.air_dissipated += (deposit[in_window] - arrived).sum(axis=0)
        late = ~in_window
        if late.any():
            ledger.expired += deposit[late].sum(axis=0)
        ledger.absorbed += (e_hit * a_f).sum(axis=0)

        energy = reflected - deposit
        vel[rows, axis] = -vel[rows, axis]
        pos = hit
        path = new_path

        dead = energy.max(axis=1) < threshold
        if dead.any():
            ledger.residual += energy[dead].sum(axis=0)
            keep = ~dead
            pos, vel, energy, path = (a[keep] for a in (pos, vel, energy, path))

    if times_out:
        times = np.concatenate(times_out)
        energies = np.concatenate(energies_out)
    else:
        times = np.zeros(0)
        energies = np.zeros((0, N_BANDS))
    return (times, energies, ledger) if with_ledger else (times, energies)


KERNEL_TAPS = 512
_KERNEL_FFT = 4096


@lru_cache(maxsize=8)
def band_kernels(sample_rate: int) -> np.ndarray:
    """Fixed minimum-phase octave band kernels, shape (6, KERNEL_TAPS).

    Target magnitude is a 3rd-order Butterworth band-pass on a 4096-point FFT
    grid; minimum phase is obtained by real-cepstrum folding, then the kernel
    is truncated with a half-Hann fade over its second half.
    """
    kernels = np.empty((N_BANDS, KERNEL_TAPS))
    nyq = sample_rate / 2.0
    for b, fc in enumerate(BAND_CENTERS):
        lo, hi = fc / math.sqrt(2.0), fc * math.sqrt(2.0)
        if hi >= nyq:
            raise ValueError(f"band {fc} Hz does not fit below Nyquist {nyq} Hz")
        sos = signal.butter(3, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
        _, h = signal.sosfreqz(sos, worN=_KERNEL_FFT, whole=True, fs=sample_rate)
        log_mag = np.log(np.maximum(np.abs(h), 1e-12))
        cep = np.fft.ifft(log_mag).real
        folded = np.zeros_like(cep)
        half = _KERNEL_FFT // 2
        folded[0] = cep[0]
        folded[1:half] = 2.0 * cep[1:half]
        folded[half] = cep[half]
        min_phase = np.fft.ifft(np.exp(np.fft.fft(folded))).real
        k = min_phase[:KERNEL_TAPS].copy()
        fade_len = KERNEL_TAPS // 2
        fade = 0.5 * (1.0 + np.cos(np.pi * np.arange(1, fade_len + 1) / fade_len))
        k[-fade_len:] *= fade
        kernels[b] = k
    return kernels


def render_rir(echogram: Echogram, config: SimConfig) -> Rir:
    """Convert an echogram into a sampled waveform.

    Each specular arrival adds amplitude sqrt(energy) at its nearest sample in
    its band's amplitude sequence, so coincident deterministic arrivals add
    coherently.  The stochastic diffuse arrivals are mutually incoherent: their
    energies are accumulated per sample, converted to a sqrt-energy envelope,
    and modulated with a fixed white unit-variance sign carrier before band
    filtering: a dense all-positive envelope concentrates its energy at DC,
    which the zero-mean band kernels would cancel, whereas the sign carrier is
    spectrally flat so each kernel passes the envelope's true in-band energy.
    This also keeps the rendered diffuse level independent of the ray count.
    Diffuse sphere-capture energies are rescaled by 4/receiver_radius^2 to the
    same energy-density convention as the 1/d^2 image-source arrivals.  The
    six band sequences are convolved with the fixed band kernels and summed.
    """
    fs = config.sample_rate
    n_arr = int(round(config.max_time * fs)) + 1
    kernels = band_kernels(fs)
    out = np.zeros(n_arr + KERNEL_TAPS - 1)
    diffuse_gain = 4.0 / config.receiver_radius ** 2
    carrier = _sign_carrier(n_arr)
    for times, energies, coherent in (
            (echogram.specular_times, echogram.specular_energy, True),
            (echogram.diffuse_times, echogram.diffuse_energy, False)):
        if times.size == 0:
            continue
        idx = np.clip(np.round(times * fs).astype(np.int64), 0, n_arr - 1)
        for b in range(N_BANDS):
            if coherent:
                seq = np.bincount(idx, weights=np.sqrt(energies[:, b]),
                                  minlength=n_arr)
            else:
                seq = np.sqrt(np.bincount(idx, weights=energies[:, b] * diffuse_gain,
                                          minlength=n_arr)) * carrier
            if not seq.any():
                continue
            out += signal.fftconvolve(seq, kernels[b])
    return Rir(out, fs)


@lru_cache(maxsize=4)
def _sign_carrier(n: int) -> np.ndarray:
    """Fixed +/-1 white sequence; a constant so rendering stays a pure function."""
    rng = np.random.default_rng(0x5eed)
    return rng.integers(0, 2, size=n) * 2.0 - 1.0


def simulate(spec: RoomSpec, config: SimConfig, seed) -> Rir:
    """Full hybrid simulation; deterministic given (spec, config, seed)."""
    rir, _ = simulate_with_echogram(spec, config, seed)
    return rir


def simulate_with_echogram(spec: RoomSpec, config: SimConfig, seed
                           ) -> tuple[Rir, Echogram]:
    rng = np.random.default_rng(seed)
    st, se = enumerate_image_sources(spec, config)
    dt, de = trace_diffuse_rain(spec, config, rng)
    echogram = Echogram(st, se, dt, de)
    return render_rir(echogram, config), echogram
