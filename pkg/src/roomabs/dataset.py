"""Persistent annotated-RIR datasets.

Layout per set: ``<set>/manifest`` (JSON), ``<set>/data.f32`` (little-endian
float32 records, inputs then labels per item) and ``<set>/rooms/`` (one room
spec JSON per item).  Preprocessed 8,000-sample vectors are stored by
default; the raw 48 kHz waveforms can optionally be archived alongside.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import AbsorptionLabel, RoomSpec, mean_absorption
from .dsp import INPUT_LENGTH, preprocess
from .sampler import SamplingStrategy, sample_room
from .simulator import SimConfig, simulate

MANIFEST_NAME = "manifest"
DATA_NAME = "data.f32"
RAW_NAME = "raw.f32"
ROOMS_DIR = "rooms"

LABEL_DIMS = {"alpha": 6, "alpha_and_scattering": 12}


class DatasetIOError(IOError):
    pass


def batch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Stable shuffling order determined by (seed, epoch)."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


@dataclass
class Dataset:
    path: Path
    manifest: dict

    @property
    def count(self) -> int:
        return self.manifest["count"]

    @property
    def vector_length(self) -> int:
        return self.manifest["vector_length"]

    @property
    def label_dim(self) -> int:
        return LABEL_DIMS[self.manifest["label_schema"]]

    def fingerprint(self) -> str:
        blob = json.dumps(self.manifest, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def _records(self) -> np.ndarray:
        rec = self.vector_length + self.label_dim
        data = np.memmap(self.path / DATA_NAME, dtype="<f4", mode="r")
        if data.size != self.count * rec:
            raise DatasetIOError(
                f"{self.path / DATA_NAME}: {data.size} floats, expected {self.count * rec}")
        return data.reshape(self.count, rec)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(inputs (N, vec_len), labels (N, label_dim)) as in-memory float32."""
        rec = self._records()
        return (np.array(rec[:, :self.vector_length]),
                np.array(rec[:, self.vector_length:]))

    def item(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self._records()[i]
        return rec[:self.vector_length].copy(), rec[self.vector_length:].copy()

    def room(self, i: int) -> RoomSpec:
        with open(self.path / ROOMS_DIR / f"{i:05d}.json") as f:
            return RoomSpec.from_dict(json.load(f))


def write_dataset(items: Iterable[tuple[np.ndarray, AbsorptionLabel, RoomSpec]],
                  path, name: str = "", seed: Optional[int] = None,
                  strategy_descriptor: Optional[dict] = None,
                  sim_config: Optional[dict] = None,
                  label_schema: str = "alpha",
                  sample_rate: int = 16_000,
                  raw_items: Optional[Iterable[np.ndarray]] = None) -> Dataset:
    """Stream items to disk; the manifest is written (and fsynced) last."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / ROOMS_DIR).mkdir(exist_ok=True)
    label_dim = LABEL_DIMS[label_schema]
    count = 0
    vec_len = None
    raw_iter = iter(raw_items) if raw_items is not None else None
    with open(path / DATA_NAME, "wb") as data_f, \
            open(path / RAW_NAME, "wb") if raw_iter is not None else _null_ctx() as raw_f:
        for vector, label, room in items:
            vector = np.asarray(vector, dtype="<f4")
            if vec_len is None:
                vec_len = vector.size
            elif vector.size != vec_len:
                raise DatasetIOError(
                    f"heterogeneous vector length at item {count}: "
                    f"{vector.size} != {vec_len}")
            lab = label.as_array(include_scattering=label_schema == "alpha_and_scattering")
            if lab.size != label_dim:
                raise DatasetIOError(f"label size {lab.size} != schema dim {label_dim}")
            data_f.write(vector.tobytes())
            data_f.write(lab.astype("<f4").tobytes())
            with open(path / ROOMS_DIR / f"{count:05d}.json", "w") as f:
                json.dump(room.to_dict(), f)
            if raw_iter is not None:
                raw_f.write(np.asarray(next(raw_iter), dtype="<f4").tobytes())
            count += 1
        data_f.flush()
        os.fsync(data_f.fileno())
    manifest = {
        "name": name,
        "seed": seed,
        "strategy": strategy_descriptor,
        "sim_config": sim_config,
        "count": count,
        "sample_rate": sample_rate,
        "vector_length": vec_len if vec_len is not None else INPUT_LENGTH,
        "label_schema": label_schema,
    }
    with open(path / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.flush()
        os.fsync(f.fileno())
    return Dataset(path=path, manifest=manifest)


class _null_ctx:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def open_dataset(path) -> Dataset:
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME) as f:
            manifest = json.load(f)
    except OSError as exc:
        raise DatasetIOError(f"cannot open dataset at {path}: {exc}") from exc
    return Dataset(path=path, manifest=manifest)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int
            ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffled batch stream; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    inputs, labels = dataset.arrays()
    perm = batch_permutation(dataset.count, seed, epoch)
    for lo in range(0, perm.size, batch_size):
        idx = perm[lo:lo + batch_size]
        yield inputs[idx], labels[idx]


# ---------------------------------------------------------------------------
# generation pipeline

def make_item(strategy: SamplingStrategy, sim_config: SimConfig, seed: int,
              index: int, snr_db: float = 30.0, label_schema: str = "alpha",
              return_raw: bool = False):
    """One fully deterministic dataset item: sampled room -> RIR -> vector."""
    room_rng = np.random.default_rng([seed, index, 0])
    room = sample_room(room_rng, strategy)
    rir = simulate(room, sim_config, [seed, index, 1])
    noise_rng = np.random.default_rng([seed, index, 2])
    vector = preprocess(rir, snr_db=snr_db, rng=noise_rng)
    label = mean_absorption(room, with_scattering=label_schema == "alpha_and_scattering")
    if return_raw:
        return vector, label, room, rir.samples
    return vector, label, room


def generate_dataset(strategy: SamplingStrategy, n: int, seed: int, path,
                     sim_config: Optional[SimConfig] = None, snr_db: float = 30.0,
                     label_schema: str = "alpha", name: str = "",
                     archive_raw: bool = False, progress: bool = False) -> Dataset:
    """Sample, simulate and preprocess ``n`` rooms into a dataset directory.

    Items are keyed by (seed, index) so the result is independent of any
    parallel execution order.
    """
    if sim_config is None:
        sim_config = SimConfig.fast()
    raws: list[np.ndarray] = [] if archive_raw else None

    def produce():
        for i in range(n):
            if archive_raw:
                vec, label, room, raw = make_item(strategy, sim_config, seed, i,
                                                  snr_db, label_schema, return_raw=True)
                raws.append(raw)
            else:
                vec, label, room = make_item(strategy, sim_config, seed, i,
                                             snr_db, label_schema)
            if progress and (i + 1) % 50 == 0:
                print(f"  {name or path}: {i + 1}/{n} rooms", flush=True)
            yield vec, label, room

    from dataclasses import asdict
    return write_dataset(produce(), path, name=name, seed=seed,
                         strategy_descriptor=strategy.describe(),
                         sim_config=asdict(sim_config), label_schema=label_schema,
                         raw_items=raws)
