#!/usr/bin/env python3
"""Build the cached datasets, trained models and experiment reports.

Every stage is idempotent: finished artifacts are detected on disk and
skipped, so the script can be re-run after an interruption.  The default
output root is tests/_cache, which the acceptance suite reads; point --root
elsewhere to reproduce the artifacts independently.

Stages (in dependency order):
  datasets   RB train/dev/held-out sets and the matched diffuse/specular
             ablation pair (same sampled rooms, simulator rays on vs off)
  dsf        classical-pipeline self-consistency probe: Eyring errors on
             near-cubic, low-absorption, high-scattering rooms
  models     CNN trained on the RB sets plus the matched ablation pair
  reports    comparative experiments: SNR sweep, cube-like vs elongated,
             and the diffuse-vs-specular training ablation
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from roomabs.baselines import estimate_alpha_classical
from roomabs.core import mean_absorption
from roomabs.dataset import generate_dataset, open_dataset
from roomabs.evaluation import MethodSpec, run_experiment
from roomabs.nn import TrainConfig, cnn_spec, save_model, train
from roomabs.sampler import rb_strategy, sample_room
from roomabs.simulator import SimConfig, simulate

DEFAULT_ROOT = Path(__file__).resolve().parent.parent / "tests" / "_cache"

DATASETS = {
    # name: (n, seed, diffuse)
    "rb_train": (2000, 101, True),
    "rb_dev": (500, 102, True),
    "rb_heldout": (200, 103, True),
    "abl_diff_train": (1000, 101, True),
    "abl_diff_dev": (300, 102, True),
    "abl_spec_train": (1000, 101, False),
    "abl_spec_dev": (300, 102, False),
}

MODELS = {
    # name: (train set, dev set, epochs)
    "cnn_rb": ("rb_train", "rb_dev", 100),
    "cnn_diff": ("abl_diff_train", "abl_diff_dev", 40),
    "cnn_spec": ("abl_spec_train", "abl_spec_dev", 40),
}

SNR_DB = 30.0
EVAL_ROOMS = 100
BATCH_SIZE = 100
LEARNING_RATE = 1e-3


def log(msg: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def ensure_dataset(root: Path, name: str):
    path = root / "datasets" / name
    if (path / "manifest").exists():
        return open_dataset(path)
    n, seed, diffuse = DATASETS[name]
    config = SimConfig.fast()
    if not diffuse:
        config = config.without_diffuse()
    log(f"dataset {name}: generating {n} rooms (seed {seed}, "
        f"{'diffuse' if diffuse else 'specular-only'})")
    ds = generate_dataset(rb_strategy(), n, seed, path, sim_config=config,
                          snr_db=SNR_DB, name=name, progress=True)
    log(f"dataset {name}: done")
    return ds


def ensure_model(root: Path, name: str) -> Path:
    path = root / "models" / f"{name}.absk"
    if path.exists():
        return path
    train_name, dev_name, epochs = MODELS[name]
    train_ds = ensure_dataset(root, train_name)
    dev_ds = ensure_dataset(root, dev_name)
    tx, ty = train_ds.arrays()
    dx, dy = dev_ds.arrays()
    config = TrainConfig(batch_size=BATCH_SIZE, learning_rate=LEARNING_RATE,
                         epochs=epochs, seed=0)
    log(f"model {name}: training CNN on {tx.shape[0]} rooms for {epochs} epochs")
    model = train(cnn_spec(), tx, ty, dx, dy, config,
                  dataset_fingerprint=train_ds.fingerprint(), verbose=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    curve = root / "models" / f"{name}_curve.csv"
    with open(curve, "w") as f:
        f.write("epoch,train_mse,dev_mse\n")
        for i, (tr, dv) in enumerate(model.provenance["history"]):
            f.write(f"{i},{tr:.9g},{dv:.9g}\n")
    log(f"model {name}: saved (best dev MSE {model.provenance['dev_loss']:.6f} "
        f"at epoch {model.provenance['best_epoch']})")
    return path


def dsf_rooms(n: int, seed: int):
    """Near-cubic RB rooms with low mean absorption and high mean scattering,
    i.e. the regime where the diffuse-field assumption behind Eyring holds."""
    rooms = []
    strategy = rb_strategy()
    index = 0
    while len(rooms) < n:
        rng = np.random.default_rng([seed, index])
        index += 1
        spec = sample_room(rng, strategy)
        g = spec.geometry
        dims = (g.lx, g.ly, g.lz)
        if max(dims) / min(dims) > 1.5:
            continue
        label = mean_absorption(spec, with_scattering=True)
        if np.mean(label.alpha_bar) >= 0.2 or np.mean(label.s_bar) <= 0.5:
            continue
        rooms.append(spec)
    return rooms


def ensure_dsf(root: Path, n: int = 100, seed: int = 301) -> Path:
    out = root / "dsf" / "eyring_errors.json"
    if out.exists():
        return out
    log(f"dsf: sampling {n} diffuse-field-regime rooms")
    rooms = dsf_rooms(n, seed)
    config = SimConfig.fast(max_time=1.5, max_image_order=30)
    errors = []
    for i, room in enumerate(rooms):
        rir = simulate(room, config, [seed, i, 1])
        est = estimate_alpha_classical(rir, room.geometry, depth_db=30.0,
                                       method="eyring").alpha_array()
        true = mean_absorption(room).as_array()
        ok = ~np.isnan(est)
        errors.extend(np.abs(est[ok] - true[ok]).tolist())
        if (i + 1) % 20 == 0:
            log(f"dsf: {i + 1}/{n} rooms")
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "n_rooms": n,
        "seed": seed,
        "sim": {"max_time": config.max_time, "max_image_order": config.max_image_order,
                "n_rays": config.n_rays},
        "median_abs_error": float(np.median(errors)),
        "errors": [round(e, 9) for e in errors],
    }
    with open(out, "w") as f:
        json.dump(payload, f, indent=1)
    log(f"dsf: median abs error {payload['median_abs_error']:.4f}")
    return out


def ensure_reports(root: Path) -> None:
    cnn_rb = ensure_model(root, "cnn_rb")
    cnn = MethodSpec(name="cnn", kind="model", model_path=str(cnn_rb))
    eyring = MethodSpec.parse("eyring")
    jobs = [
        ("snr_sweep", [eyring, cnn], 401, {"snr_levels": (10.0, 20.0, 30.0, 40.0, 50.0)}),
        ("cube_like", [eyring, cnn], 402, {}),
        ("elongated", [eyring, cnn], 403, {}),
    ]
    for family, methods, seed, kwargs in jobs:
        out_dir = root / "reports" / family
        if (out_dir / f"{family}_boxstats.csv").exists():
            continue
        log(f"report {family}: running ({EVAL_ROOMS} rooms)")
        run_experiment(family, methods, EVAL_ROOMS, seed, out_dir=out_dir,
                       snr_db=SNR_DB, progress=True, **kwargs)
    out_dir = root / "reports" / "ablation"
    if not (out_dir / "specular_ablation_boxstats.csv").exists():
        methods = [
            MethodSpec(name="cnn_diff", kind="model",
                       model_path=str(ensure_model(root, "cnn_diff"))),
            MethodSpec(name="cnn_spec", kind="model",
                       model_path=str(ensure_model(root, "cnn_spec"))),
        ]
        log(f"report ablation: running ({EVAL_ROOMS} rooms)")
        run_experiment("specular_ablation", methods, EVAL_ROOMS, 404,
                       out_dir=out_dir, snr_db=SNR_DB, progress=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--root", type=Path, default=DEFAULT_ROOT)
    parser.add_argument("--stage", choices=["datasets", "dsf", "models", "reports", "all"],
                        default="all")
    args = parser.parse_args(argv)
    root = args.root
    root.mkdir(parents=True, exist_ok=True)
    if args.stage in ("datasets", "all"):
        for name in DATASETS:
            ensure_dataset(root, name)
    if args.stage in ("dsf", "all"):
        ensure_dsf(root)
    if args.stage in ("models", "all"):
        for name in MODELS:
            ensure_model(root, name)
    if args.stage in ("reports", "all"):
        ensure_reports(root)
    log("all requested stages complete")
    return 0


if __name__ == "__main__":
    sys.exit(main())
