"""Command-line interface.

Subcommands: simulate, dataset, analyze, train, eval, infer.  Data goes to
stdout / output files; diagnostics and the resolved configuration echo go to
stderr.  Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import baselines, dataset, dsp, evaluation, nn, sampler
from .core import BAND_CENTERS, RoomSpec
from .simulator import Rir, SimConfig


def read_wav(path) -> Rir:
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        data = data[:, 0]
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    return Rir(np.asarray(data, dtype=float), int(rate))


def write_wav(path, rir: Rir) -> None:
    wavfile.write(path, rir.sample_rate, rir.samples.astype(np.float32))


def _sim_config(args) -> SimConfig:
    return SimConfig.paper() if args.paper else SimConfig.fast()


def _echo_config(args) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {json.dumps(resolved, sort_keys=True, default=str)}", file=sys.stderr)


def cmd_simulate(args) -> int:
    with open(args.room) as f:
        spec = RoomSpec.from_dict(json.load(f))
    from .simulator import simulate

    rir = simulate(spec, _sim_config(args), args.seed)
    write_wav(args.out, rir)
    print(args.out)
    return 0


def cmd_dataset(args) -> int:
    strategy = sampler.rb_strategy() if args.strategy == "rb" else sampler.unif_strategy()
    config = _sim_config(args)
    if args.no_diffuse:
        config = config.without_diffuse()
    out = Path(args.out)
    for split, count, sub_seed in (("train", args.train, 0), ("dev", args.dev, 1)):
        if count <= 0:
            continue
        split_seed = int(np.random.default_rng([args.seed, sub_seed]).integers(2**31))
        ds = dataset.generate_dataset(
            strategy, count, split_seed, out / split, sim_config=config,
            snr_db=args.snr, label_schema=args.label_schema,
            name=f"{args.strategy}-{split}", progress=True)
        print(f"{split}: {ds.count} items at {ds.path}")
    return 0


def cmd_analyze(args) -> int:
    from .core import RoomGeometry

    rir = read_wav(args.rir)
    geometry = RoomGeometry(args.lx, args.ly, args.lz)
    bands = dsp.octave_filter_bank(rir)
    print("band_hz\trt_s\tsabine\teyring\tscreening")
    for b, fc in enumerate(BAND_CENTERS):
        try:
            curve = dsp.backward_integrate(bands[b], rir.sample_rate)
            flag = baselines.classify_schroeder(curve)
            rt = dsp.estimate_rt(curve, depth_db=args.depth)
            a_sab = baselines.sabine(geometry.volume, geometry.total_surface, rt.rt)
            a_eyr = baselines.eyring(a_sab) if a_sab < 1.0 else float("nan")
            print(f"{int(fc)}\t{rt.rt:.4f}\t{a_sab:.4f}\t{a_eyr:.4f}\t{flag}")
        except (dsp.DspError, baselines.EyringDomainError) as exc:
            print(f"{int(fc)}\tunavailable\t-\t-\t- ({exc})")
    return 0


def cmd_train(args) -> int:
    train_ds = dataset.open_dataset(args.train_dir)
    dev_ds = dataset.open_dataset(args.dev_dir)
    tx, ty = train_ds.arrays()
    dx, dy = dev_ds.arrays()
    spec_fn = nn.cnn_spec if args.arch == "cnn" else nn.mlp_spec
    spec = spec_fn(output_head=args.head, input_dim=train_ds.vector_length)
    config = nn.TrainConfig(batch_size=args.batch_size, learning_rate=args.lr,
                            epochs=args.epochs, seed=args.seed)
    model = nn.train(spec, tx, ty, dx, dy, config,
                     dataset_fingerprint=train_ds.fingerprint(), verbose=True)
    nn.save_model(model, args.out)
    if args.curves:
        with open(args.curves, "w") as f:
            f.write("# config: " + json.dumps(config.to_dict(), sort_keys=True) + "\n")
            f.write("epoch,train_loss,dev_loss\n")
            for e, (tr, dv) in enumerate(model.provenance["history"]):
                f.write(f"{e},{tr:.9g},{dv:.9g}\n")
    print(f"{args.out} (best epoch {model.provenance['best_epoch']}, "
          f"dev loss {model.provenance['dev_loss']:.6f})")
    return 0


def cmd_eval(args) -> int:
    methods = [evaluation.MethodSpec.parse(tok) for tok in args.methods]
    n_rooms = args.n if args.n else (500 if args.paper else evaluation.DEFAULT_ROOMS_PER_FAMILY)
    report = evaluation.run_experiment(
        args.family, methods, n_rooms, args.seed, sim_config=_sim_config(args),
        out_dir=args.out, family_arg=args.family_arg, snr_db=args.snr,
        depth_db=args.depth, progress=True)
    for name, s in report.stats.items():
        print(f"{name}: n={s.n} median={s.median:.4f} mean={s.mean:.4f}")
    return 0


def cmd_infer(args) -> int:
    model = nn.load_model(args.model)
    rir = read_wav(args.rir)
    if rir.sample_rate == dsp.SOURCE_RATE:
        vec = dsp.preprocess(rir, snr_db=float("inf"))
    elif rir.sample_rate == dsp.TARGET_RATE:
        x = rir.samples[:dsp.INPUT_LENGTH]
        x = np.pad(x, (0, dsp.INPUT_LENGTH - x.size))
        vec = x / np.max(np.abs(x))
    else:
        raise dsp.SampleRateError(f"expected 48 kHz or 16 kHz input, got {rir.sample_rate}")
    label = nn.predict(model, vec)
    print("band_hz\talpha")
    for fc, a in zip(BAND_CENTERS, label.alpha_bar):
        print(f"{int(fc)}\t{a:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roomabs",
                                     description="Room acoustics simulation and "
                                                 "mean absorption estimation toolkit")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker bound; 1 guarantees bit reproducibility")
    profile = parser.add_mutually_exclusive_group()
    profile.add_argument("--paper", action="store_true",
                         help="full-fidelity profile (50,000 rays, order 50)")
    profile.add_argument("--fast", action="store_true",
                         help="desk-scale profile (default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="RoomSpec JSON -> waveform file")
    p.add_argument("room")
    p.add_argument("out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="generate annotated train/dev datasets")
    p.add_argument("--strategy", choices=("rb", "unif"), default="rb")
    p.add_argument("--train", type=int, default=15000)
    p.add_argument("--dev", type=int, default=5000)
    p.add_argument("--snr", type=float, default=30.0)
    p.add_argument("--label-schema", choices=tuple(dataset.LABEL_DIMS), default="alpha")
    p.add_argument("--no-diffuse", action="store_true",
                   help="specular-only ablation datasets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("analyze", help="waveform -> per-band RT/Sabine/Eyring table")
    p.add_argument("--lx", type=float, required=True)
    p.add_argument("--ly", type=float, required=True)
    p.add_argument("--lz", type=float, required=True)
    p.add_argument("--depth", type=float, default=30.0)
    p.add_argument("rir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a regressor on dataset directories")
    p.add_argument("--arch", choices=("cnn", "mlp"), default="cnn")
    p.add_argument("--head", choices=tuple(nn.HEAD_DIMS), default="alpha")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--dev-dir", required=True)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", help="write train/dev loss curves CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run a comparative experiment family")
    p.add_argument("--family", choices=evaluation.GENERATED_FAMILIES, required=True)
    p.add_argument("--methods", nargs="+", required=True,
                   help="eyring | sabine | name=model.absk")
    p.add_argument("--n", type=int, default=0, help="rooms per family")
    p.add_argument("--snr", type=float, default=30.0)
    p.add_argument("--depth", type=float, default=30.0)
    p.add_argument("--family-arg",
                   help="coefficient value or RT range name, family dependent")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="model + waveform -> 6-band absorption table")
    p.add_argument("--model", required=True)
    p.add_argument("rir")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo_config(args)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
