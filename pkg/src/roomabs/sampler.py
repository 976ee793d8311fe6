"""Random room generation.

Two sampling strategies for surface acoustics: Unif (all 36 absorption
coefficients uniform on [0, 1]) and a reflectivity-biased (RB) scheme that
tosses a fair coin per surface type, yielding either frequency-flat
reflective profiles or banded draws inside per-type envelopes.  Also crafts
the fixed evaluation test-set families.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Literal, Optional

import numpy as np

from .core import (N_BANDS, BandProfile, InvalidRoomError, RoomGeometry,
                   RoomSpec, Surface)

SURFACE_TYPE = ("floor", "ceiling", "wall", "wall", "wall", "wall")  # canonical order

#: Geometry draw bounds in meters.
HEIGHT_RANGE = (2.5, 4.0)
WIDTH_RANGE = (1.5, 10.0)
MIN_SURFACE_DISTANCE = 0.5
MIN_PAIR_SEPARATION = 1.0

#: The five fixed geometries of the realistic test family.
REALISTIC_GEOMETRIES = ((4.0, 5.0, 3.0), (10.0, 2.0, 3.0), (10.0, 5.0, 3.0),
                        (5.0, 8.0, 2.5), (10.0, 10.0, 5.0))

#: Named reverberation-time windows (seconds) for the RT-constrained family.
RT_RANGES = {
    "slightly_reverberant": (0.1, 0.3),
    "semi_reverberant": (0.3, 0.8),
    "reverberant": (0.8, 2.0),
}

UNIF_SCATTERING = np.array([[0.0, 1.0]] * N_BANDS)
RB_SCATTERING = np.array([[0.0, 0.3]] * 3 + [[0.2, 1.0]] * 3)


class InfeasibleGeometryError(ValueError):
    pass


class IterationCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaterialRanges:
    """Envelope bounds for the RB sampler, per surface type."""

    reflective: tuple[float, float]
    wall: np.ndarray  # (6, 2) lower/upper per band
    floor: np.ndarray
    ceiling: np.ndarray

    def __post_init__(self):
        for name in ("wall", "floor", "ceiling"):
            env = np.asarray(getattr(self, name), dtype=float)
            if env.shape != (N_BANDS, 2):
                raise ValueError(f"{name} envelope must be (6, 2)")
            if np.any(env < 0) or np.any(env > 1) or np.any(env[:, 0] > env[:, 1]):
                raise ValueError(f"{name} envelope violates 0 <= lower <= upper <= 1")
            object.__setattr__(self, name, env)

    def envelope(self, surface_type: str) -> np.ndarray:
        return getattr(self, surface_type)


@dataclass(frozen=True)
class Material:
    name: str
    surface_class: str  # reflective | wall | floor | ceiling
    absorption: BandProfile


@dataclass(frozen=True)
class MaterialsTable:
    ranges: MaterialRanges
    materials: tuple[Material, ...]

    def of_class(self, cls: str) -> list[Material]:
        return [m for m in self.materials if m.surface_class == cls]

    def pool_for_surface(self, surface_type: str) -> list[Material]:
        """Reflective materials can sit on any surface; others match their type."""
        return self.of_class("reflective") + self.of_class(surface_type)


def load_materials(path=None) -> MaterialsTable:
    """Load the materials table (shipped defaults when ``path`` is None)."""
    if path is None:
        raw = resources.files("roomabs.data").joinpath("materials.json").read_text()
    else:
        with open(path) as f:
            raw = f.read()
    doc = json.loads(raw)
    env = doc["envelopes"]
    ranges = MaterialRanges(
        reflective=tuple(doc["reflective_range"]),
        wall=np.column_stack([env["wall"]["lower"], env["wall"]["upper"]]),
        floor=np.column_stack([env["floor"]["lower"], env["floor"]["upper"]]),
        ceiling=np.column_stack([env["ceiling"]["lower"], env["ceiling"]["upper"]]),
    )
    materials = tuple(
        Material(m["name"], m["class"], BandProfile(tuple(m["absorption"])))
        for m in doc["materials"])
    return MaterialsTable(ranges=ranges, materials=materials)


@dataclass(frozen=True)
class SamplingStrategy:
    kind: Literal["unif", "rb"]
    material_ranges: Optional[MaterialRanges] = None
    scattering_ranges: np.ndarray = None  # (6, 2)

    def __post_init__(self):
        if self.kind == "rb":
            ranges = self.material_ranges or load_materials().ranges
            object.__setattr__(self, "material_ranges", ranges)
            scat = RB_SCATTERING if self.scattering_ranges is None else self.scattering_ranges
        elif self.kind == "unif":
            scat = UNIF_SCATTERING if self.scattering_ranges is None else self.scattering_ranges
        else:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        object.__setattr__(self, "scattering_ranges", np.asarray(scat, dtype=float))

    def describe(self) -> dict:
        return {"kind": self.kind, "scattering_ranges": self.scattering_ranges.tolist()}


def unif_strategy() -> SamplingStrategy:
    return SamplingStrategy(kind="unif")


def rb_strategy(materials: Optional[MaterialsTable] = None) -> SamplingStrategy:
    ranges = materials.ranges if materials is not None else None
    return SamplingStrategy(kind="rb", material_ranges=ranges)


def sample_geometry(rng: np.random.Generator) -> RoomGeometry:
    """lx, ly ~ U[1.5, 10] m; lz ~ U[2.5, 4] m."""
    lx = rng.uniform(*WIDTH_RANGE)
    ly = rng.uniform(*WIDTH_RANGE)
    lz = rng.uniform(*HEIGHT_RANGE)
    return RoomGeometry(lx, ly, lz)


def sample_positions(rng: np.random.Generator, geometry: RoomGeometry,
                     max_iterations: int = 10_000
                     ) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Source/receiver >= 0.5 m from every face and >= 1 m apart (rejection)."""
    dims = np.array([geometry.lx, geometry.ly, geometry.lz])
    lo = MIN_SURFACE_DISTANCE
    hi = dims - MIN_SURFACE_DISTANCE
    if np.any(hi <= lo):
        raise InfeasibleGeometryError(
            f"no interior points at {MIN_SURFACE_DISTANCE} m from all faces of {dims}")
    if np.linalg.norm(hi - lo) < MIN_PAIR_SEPARATION:
        raise InfeasibleGeometryError(
            f"margin region of {dims} too small for {MIN_PAIR_SEPARATION} m separation")
    for _ in range(max_iterations):
        src = rng.uniform(lo, hi)
        rcv = rng.uniform(lo, hi)
        if np.linalg.norm(src - rcv) >= MIN_PAIR_SEPARATION:
            return tuple(src), tuple(rcv)
    raise IterationCapError(f"no valid placement after {max_iterations} rejections")


def _scattering_profile(rng: np.random.Generator, ranges: np.ndarray) -> BandProfile:
    return BandProfile(tuple(rng.uniform(ranges[:, 0], ranges[:, 1])))


def sample_acoustics(rng: np.random.Generator, strategy: SamplingStrategy
                     ) -> tuple[Surface, ...]:
    """Absorption/scattering profiles for the six surfaces, canonical order.

    One scattering profile is drawn per room and shared by every surface.
    Draw order is fixed (coins, then surfaces in canonical order, then
    scattering) so identical seeds yield identical rooms.
    """
    if strategy.kind == "unif":
        absorptions = [BandProfile(tuple(rng.uniform(0.0, 1.0, N_BANDS)))
                       for _ in range(6)]
    else:
        coins = {t: bool(rng.integers(0, 2)) for t in ("wall", "floor", "ceiling")}
        ranges = strategy.material_ranges
        absorptions = []
        for surface_type in SURFACE_TYPE:
            if coins[surface_type]:  # reflective: frequency-flat level
                level = rng.uniform(*ranges.reflective)
                absorptions.append(BandProfile.flat(level))
            else:  # banded draw inside the type envelope
                env = ranges.envelope(surface_type)
                absorptions.append(BandProfile(tuple(rng.uniform(env[:, 0], env[:, 1]))))
    scattering = _scattering_profile(rng, strategy.scattering_ranges)
    return tuple(Surface(absorption=a, scattering=scattering) for a in absorptions)


def sample_room(rng: np.random.Generator, strategy: SamplingStrategy) -> RoomSpec:
    geometry = sample_geometry(rng)
    source, receiver = sample_positions(rng, geometry)
    surfaces = sample_acoustics(rng, strategy)
    return RoomSpec(geometry=geometry, surfaces=surfaces, source=source,
                    receiver=receiver)


def sample_rooms(n: int, seed, strategy: SamplingStrategy) -> list[RoomSpec]:
    rng = np.random.default_rng(seed)
    return [sample_room(rng, strategy) for _ in range(n)]


def _room_with_geometry(rng: np.random.Generator, geometry: RoomGeometry,
                        strategy: SamplingStrategy) -> RoomSpec:
    source, receiver = sample_positions(rng, geometry)
    surfaces = sample_acoustics(rng, strategy)
    return RoomSpec(geometry=geometry, surfaces=surfaces, source=source,
                    receiver=receiver)


def _realistic_room(rng: np.random.Generator, table: MaterialsTable) -> RoomSpec:
    geometry = RoomGeometry(*REALISTIC_GEOMETRIES[rng.integers(len(REALISTIC_GEOMETRIES))])
    source, receiver = sample_positions(rng, geometry)
    scattering = _scattering_profile(rng, RB_SCATTERING)
    surfaces = []
    for surface_type in SURFACE_TYPE:
        pool = table.pool_for_surface(surface_type)
        material = pool[rng.integers(len(pool))]
        surfaces.append(Surface(absorption=material.absorption, scattering=scattering))
    return RoomSpec(geometry=geometry, surfaces=tuple(surfaces), source=source,
                    receiver=receiver)


def _constant_profile_room(rng: np.random.Generator, fixed: str, value: float,
                           strategy: SamplingStrategy) -> RoomSpec:
    geometry = sample_geometry(rng)
    source, receiver = sample_positions(rng, geometry)
    surfaces = sample_acoustics(rng, strategy)
    const = BandProfile.flat(value)
    if fixed == "absorption":
        surfaces = tuple(Surface(absorption=const, scattering=s.scattering)
                         for s in surfaces)
    else:
        surfaces = tuple(Surface(absorption=s.absorption, scattering=const)
                         for s in surfaces)
    return RoomSpec(geometry=geometry, surfaces=surfaces, source=source,
                    receiver=receiver)


def _rt30_in_range(spec: RoomSpec, sim_config, seed, rt_range) -> bool:
    from .dsp import InsufficientDecayError, backward_integrate, estimate_rt, octave_filter_bank
    from .simulator import simulate

    rir = simulate(spec, sim_config, seed)
    for band_signal in octave_filter_bank(rir):
        try:
            curve = backward_integrate(band_signal, rir.sample_rate)
            rt = estimate_rt(curve, depth_db=30.0).rt
        except InsufficientDecayError:
            return False
        if not (rt_range[0] <= rt <= rt_range[1]):
            return False
    return True


def craft_test_set(kind: str, n: int, rng: np.random.Generator,
                   sim_config=None, value: float = None,
                   rt_range: tuple[float, float] = None,
                   materials: Optional[MaterialsTable] = None,
                   max_reject: int = 200) -> list[RoomSpec]:
    """Build one of the evaluation room families.

    kind: realistic | cube_like | flat | elongated | rt_constrained |
    scattering_fixed | absorption_fixed.  ``value`` parameterizes the fixed
    coefficient families; ``rt_range`` (seconds) or one of the named
    :data:`RT_RANGES` keys governs rt_constrained.
    """
    rb = rb_strategy(materials)
    rooms: list[RoomSpec] = []
    if kind == "realistic":
        table = materials if materials is not None else load_materials()
        return [_realistic_room(rng, table) for _ in range(n)]
    if kind in ("cube_like", "flat", "elongated"):
        x_rng, y_rng = {"cube_like": ((2, 4), (2, 4)),
                        "flat": ((8, 10), (8, 10)),
                        "elongated": ((2, 4), (8, 10))}[kind]
        for _ in range(n):
            geom = RoomGeometry(rng.uniform(*x_rng), rng.uniform(*y_rng), 2.5)
            rooms.append(_room_with_geometry(rng, geom, rb))
        return rooms
    if kind in ("scattering_fixed", "absorption_fixed"):
        if value is None:
            raise ValueError(f"{kind} requires a coefficient value")
        fixed = "absorption" if kind == "absorption_fixed" else "scattering"
        return [_constant_profile_room(rng, fixed, value, rb) for _ in range(n)]
    if kind == "rt_constrained":
        if isinstance(rt_range, str):
            rt_range = RT_RANGES[rt_range]
        if rt_range is None:
            raise ValueError("rt_constrained requires rt_range")
        if sim_config is None:
            from .simulator import SimConfig
            sim_config = SimConfig.fast()
        rejected = 0
        while len(rooms) < n:
            spec = sample_room(rng, rb)
            if _rt30_in_range(spec, sim_config, rng.integers(2 ** 63), rt_range):
                rooms.append(spec)
            else:
                rejected += 1
                if rejected > max_reject * n:
                    raise IterationCapError(
                        f"rt_constrained rejection rate too high: {rejected} rejections "
                        f"for {len(rooms)}/{n} rooms")
        return rooms
    raise ValueError(f"unknown test-set kind {kind!r}")
