"""Metrics, box-plot statistics and experiment runners.

An experiment generates one simulated room family, runs the requested
estimators (classical formulas and/or trained regressors) on identically
preprocessed RIRs, and emits absolute-error records plus Tukey box statistics
as CSV files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .baselines import estimate_alpha_classical
from .core import N_BANDS, RoomSpec, mean_absorption
from .dsp import TARGET_RATE, preprocess
from .sampler import craft_test_set
from .simulator import Rir, SimConfig, simulate

DEFAULT_SNR_LEVELS = (10.0, 20.0, 30.0, 40.0, 50.0, math.inf)
DEFAULT_ROOMS_PER_FAMILY = 100  # paper scale is 500; restored by --paper

GENERATED_FAMILIES = ("realistic", "cube_like", "flat", "elongated",
                      "rt_constrained", "scattering_fixed", "absorption_fixed",
                      "snr_sweep", "specular_ablation")


class MissingModelError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ErrorRecord:
    method: str
    room_id: int
    band: int  # -1 when pooled across bands
    absolute_error: float


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    mean: float
    std: float
    n: int


def absolute_errors(estimates: np.ndarray, labels: np.ndarray, method: str = "",
                    aggregate_over_bands: bool = True) -> list[ErrorRecord]:
    """One record per (RIR, band); NaN estimates (unavailable bands) are skipped.

    With ``aggregate_over_bands`` the band field is pooled (-1), matching the
    all-band error distributions of the comparative study.
    """
    estimates = np.asarray(estimates, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if estimates.shape != labels.shape:
        raise ValueError(f"misaligned inputs: {estimates.shape} vs {labels.shape}")
    records = []
    for i in range(estimates.shape[0]):
        for b in range(estimates.shape[1]):
            if np.isnan(estimates[i, b]):
                continue
            err = abs(estimates[i, b] - labels[i, b])
            records.append(ErrorRecord(method, i, -1 if aggregate_over_bands else b, err))
    return records


def box_stats(errors: Sequence[float]) -> BoxStats:
    """Tukey box statistics; whiskers clip to the furthest datum within
    1.5 IQR of the quartiles."""
    x = np.asarray([e.absolute_error if isinstance(e, ErrorRecord) else e
                    for e in errors], dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo_candidates = x[x >= q1 - 1.5 * iqr]
    hi_candidates = x[x <= q3 + 1.5 * iqr]
    return BoxStats(median=float(med), q1=float(q1), q3=float(q3),
                    whisker_low=float(lo_candidates.min()),
                    whisker_high=float(hi_candidates.max()),
                    mean=float(x.mean()), std=float(x.std()), n=int(x.size))


# ---------------------------------------------------------------------------
# experiment runner

@dataclass
class MethodSpec:
    name: str
    kind: str  # eyring | sabine | model
    model_path: Optional[str] = None

    @classmethod
    def parse(cls, token: str) -> "MethodSpec":
        """'eyring', 'sabine', or 'name=path/to/model.absk'."""
        if token in ("eyring", "sabine"):
            return cls(name=token, kind=token)
        if "=" in token:
            name, path = token.split("=", 1)
            return cls(name=name, kind="model", model_path=path)
        raise ValueError(f"cannot parse method {token!r}")


@dataclass
class ExperimentReport:
    family: str
    records: dict[str, list[ErrorRecord]]
    stats: dict[str, BoxStats]
    config: dict


def _simulate_family(family: str, n_rooms: int, seed: int, sim_config: SimConfig,
                     family_arg=None) -> tuple[list[RoomSpec], list[Rir], np.ndarray]:
    kind = "realistic" if family in ("snr_sweep", "specular_ablation") else family
    rng = np.random.default_rng([seed, 100])
    kwargs = {}
    if kind in ("scattering_fixed", "absorption_fixed"):
        kwargs["value"] = float(family_arg)
    elif kind == "rt_constrained":
        kwargs["rt_range"] = family_arg
        kwargs["sim_config"] = sim_config
    rooms = craft_test_set(kind, n_rooms, rng, **kwargs)
    rirs = [simulate(room, sim_config, [seed, i, 1]) for i, room in enumerate(rooms)]
    labels = np.stack([mean_absorption(r).as_array() for r in rooms])
    return rooms, rirs, labels


def _estimate(method: MethodSpec, vectors: np.ndarray, rooms: list[RoomSpec],
              depth_db: float) -> np.ndarray:
    """Per-room, per-band absorption estimates (NaN marks unavailable bands)."""
    if method.kind in ("eyring", "sabine"):
        out = np.full((len(rooms), N_BANDS), np.nan)
        for i, room in enumerate(rooms):
            est = estimate_alpha_classical(Rir(vectors[i], TARGET_RATE),
                                           room.geometry, depth_db=depth_db,
                                           method=method.kind)
            out[i] = est.alpha_array()
        return out
    if method.model_path is None or not Path(method.model_path).exists():
        raise MissingModelError(f"method {method.name!r}: no model file "
                                f"at {method.model_path!r}")
    model = nn.load_model(method.model_path)
    outputs = nn.forward(model, np.asarray(vectors, dtype=np.float32))
    return nn.comparable_alpha(model, outputs)


def run_experiment(family: str, methods: Sequence[MethodSpec], n_rooms: int,
                   seed: int, sim_config: Optional[SimConfig] = None,
                   out_dir=None, snr_levels: Sequence[float] = DEFAULT_SNR_LEVELS,
                   snr_db: float = 30.0, depth_db: float = 30.0,
                   family_arg=None, aggregate_over_bands: bool = True,
                   progress: bool = False) -> ExperimentReport:
    """Run one comparative experiment and (optionally) write its CSVs.

    snr_sweep re-noises the same fixed RIRs at each level; all other families
    preprocess at ``snr_db``.  specular_ablation evaluates the given methods
    on the realistic family (pair a diffuse-trained and a specular-trained
    model file to reproduce the ablation).
    """
    if family not in GENERATED_FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if sim_config is None:
        sim_config = SimConfig.fast()
    rooms, rirs, labels = _simulate_family(family, n_rooms, seed, sim_config, family_arg)
    if progress:
        print(f"{family}: simulated {len(rooms)} rooms", flush=True)

    config_echo = {
        "family": family, "n_rooms": n_rooms, "seed": seed, "snr_db": snr_db,
        "depth_db": depth_db, "methods": [m.name for m in methods],
        "family_arg": str(family_arg) if family_arg is not None else None,
        "sim": {"n_rays": sim_config.n_rays, "max_image_order": sim_config.max_image_order,
                "sample_rate": sim_config.sample_rate, "max_time": sim_config.max_time},
    }
    if family == "snr_sweep":
        config_echo["snr_levels"] = [str(s) for s in snr_levels]

    def vectors_at(snr: float, tag: int) -> np.ndarray:
        return np.stack([preprocess(rirs[i], snr_db=snr,
                                    rng=np.random.default_rng([seed, i, 2, tag]))
                         for i in range(len(rirs))])

    records: dict[str, list[ErrorRecord]] = {}
    if family == "snr_sweep":
        for k, snr in enumerate(snr_levels):
            vecs = vectors_at(snr, k)
            for method in methods:
                est = _estimate(method, vecs, rooms, depth_db)
                name = f"{method.name}@snr{'inf' if math.isinf(snr) else int(snr)}"
                records[name] = absolute_errors(est, labels, name, aggregate_over_bands)
    else:
        vecs = vectors_at(snr_db, 0)
        for method in methods:
            est = _estimate(method, vecs, rooms, depth_db)
            records[method.name] = absolute_errors(est, labels, method.name,
                                                   aggregate_over_bands)

    stats = {name: box_stats(recs) for name, recs in records.items() if recs}
    report = ExperimentReport(family=family, records=records, stats=stats,
                              config=config_echo)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_report(report: ExperimentReport, out_dir) -> list[Path]:
    """One ErrorRecord CSV per method, one BoxStats CSV, one text summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = "# config: " + json.dumps(report.config, sort_keys=True) + "\n"
    paths = []
    for name, recs in report.records.items():
        p = out_dir / f"{report.family}_{name.replace('@', '_')}.csv"
        with open(p, "w") as f:
            f.write(header)
            f.write("method,room_id,band,absolute_error\n")
            for r in recs:
                f.write(f"{r.method},{r.room_id},{r.band},{_fmt(r.absolute_error)}\n")
        paths.append(p)
    p = out_dir / f"{report.family}_boxstats.csv"
    with open(p, "w") as f:
        f.write(header)
        f.write("method,n,median,q1,q3,whisker_low,whisker_high,mean,std\n")
        for name, s in report.stats.items():
            f.write(f"{name},{s.n},{_fmt(s.median)},{_fmt(s.q1)},{_fmt(s.q3)},"
                    f"{_fmt(s.whisker_low)},{_fmt(s.whisker_high)},"
                    f"{_fmt(s.mean)},{_fmt(s.std)}\n")
    paths.append(p)
    p = out_dir / f"{report.family}_summary.txt"
    with open(p, "w") as f:
        f.write(header)
        for name, s in report.stats.items():
            f.write(f"{name}: n={s.n} median={s.median:.4f} mean={s.mean:.4f} "
                    f"iqr=[{s.q1:.4f}, {s.q3:.4f}]\n")
    paths.append(p)
    return paths
