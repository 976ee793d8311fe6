"""Shared domain types: rooms, surfaces, octave bands and absorption labels.

Surface order is fixed as (floor, ceiling, west, south, east, north) and is
relied on by serialization, the samplers and the simulator.  The west wall is
the plane x=0, south is y=0, east is x=lx, north is y=ly; floor is z=0 and
ceiling is z=lz.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

#: Octave band centers in Hz, low to high.
BAND_CENTERS = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0)
N_BANDS = len(BAND_CENTERS)

#: Canonical surface order.
SURFACE_NAMES = ("floor", "ceiling", "west", "south", "east", "north")
N_SURFACES = len(SURFACE_NAMES)


class InvalidRoomError(ValueError):
    """Raised when a room specification violates its invariants."""


@dataclass(frozen=True)
class BandProfile:
    """One dimensionless coefficient per octave band, each in [0, 1]."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != N_BANDS:
            raise InvalidRoomError(f"expected {N_BANDS} band values, got {len(vals)}")
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise InvalidRoomError(f"band values must lie in [0, 1]: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def flat(cls, level: float) -> "BandProfile":
        return cls((level,) * N_BANDS)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class RoomGeometry:
    """Shoebox dimensions in meters."""

    lx: float
    ly: float
    lz: float

    def __post_init__(self):
        if min(self.lx, self.ly, self.lz) <= 0.0:
            raise InvalidRoomError(f"dimensions must be positive: {self}")

    @property
    def volume(self) -> float:
        return self.lx * self.ly * self.lz

    @property
    def total_surface(self) -> float:
        return 2.0 * (self.lx * self.ly + self.lx * self.lz + self.ly * self.lz)

    def face_areas(self) -> np.ndarray:
        """Areas of the six faces in canonical surface order."""
        floor = self.lx * self.ly
        ew = self.ly * self.lz  # west/east walls
        ns = self.lx * self.lz  # south/north walls
        return np.array([floor, floor, ew, ns, ew, ns])


@dataclass(frozen=True)
class Surface:
    absorption: BandProfile
    scattering: BandProfile


@dataclass(frozen=True)
class RoomSpec:
    """Full input to one simulation: geometry, acoustics and placement."""

    geometry: RoomGeometry
    surfaces: tuple[Surface, ...]  # canonical order (floor, ceiling, W, S, E, N)
    source: tuple[float, float, float]
    receiver: tuple[float, float, float]

    def __post_init__(self):
        if len(self.surfaces) != N_SURFACES:
            raise InvalidRoomError(f"expected {N_SURFACES} surfaces")
        object.__setattr__(self, "source", tuple(float(c) for c in self.source))
        object.__setattr__(self, "receiver", tuple(float(c) for c in self.receiver))
        dims = (self.geometry.lx, self.geometry.ly, self.geometry.lz)
        for name, point in (("source", self.source), ("receiver", self.receiver)):
            for c, d in zip(point, dims):
                if not (0.0 < c < d):
                    raise InvalidRoomError(f"{name} {point} not strictly inside room {dims}")

    def absorption_matrix(self) -> np.ndarray:
        """(6 surfaces, 6 bands) absorption coefficients."""
        return np.stack([s.absorption.as_array() for s in self.surfaces])

    def scattering_matrix(self) -> np.ndarray:
        """(6 surfaces, 6 bands) scattering coefficients."""
        return np.stack([s.scattering.as_array() for s in self.surfaces])

    def to_dict(self) -> dict:
        return {
            "geometry": {"lx": self.geometry.lx, "ly": self.geometry.ly, "lz": self.geometry.lz},
            "surfaces": {
                name: {
                    "absorption": list(surf.absorption.values),
                    "scattering": list(surf.scattering.values),
                }
                for name, surf in zip(SURFACE_NAMES, self.surfaces)
            },
            "source": list(self.source),
            "receiver": list(self.receiver),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        geom = RoomGeometry(**d["geometry"])
        surfaces = tuple(
            Surface(
                absorption=BandProfile(tuple(d["surfaces"][name]["absorption"])),
                scattering=BandProfile(tuple(d["surfaces"][name]["scattering"])),
            )
            for name in SURFACE_NAMES
        )
        return cls(geometry=geom, surfaces=surfaces, source=tuple(d["source"]),
                   receiver=tuple(d["receiver"]))


def uniform_room(lx: float, ly: float, lz: float, alpha: float, scattering: float,
                 source: tuple[float, float, float],
                 receiver: tuple[float, float, float]) -> RoomSpec:
    """Room whose six surfaces share one frequency-flat absorption/scattering."""
    surface = Surface(absorption=BandProfile.flat(alpha),
                      scattering=BandProfile.flat(scattering))
    return RoomSpec(geometry=RoomGeometry(lx, ly, lz), surfaces=(surface,) * N_SURFACES,
                    source=source, receiver=receiver)


@dataclass(frozen=True)
class AbsorptionLabel:
    """Area-weighted mean absorption per band, optionally with mean scattering."""

    alpha_bar: tuple[float, ...]
    s_bar: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        alpha = tuple(float(v) for v in self.alpha_bar)
        if len(alpha) != N_BANDS or any(not (0.0 <= v <= 1.0) for v in alpha):
            raise InvalidRoomError(f"alpha_bar must be {N_BANDS} values in [0, 1]: {alpha}")
        object.__setattr__(self, "alpha_bar", alpha)
        if self.s_bar is not None:
            s = tuple(float(v) for v in self.s_bar)
            if len(s) != N_BANDS or any(not (0.0 <= v <= 1.0) for v in s):
                raise InvalidRoomError(f"s_bar must be {N_BANDS} values in [0, 1]: {s}")
            object.__setattr__(self, "s_bar", s)

    def as_array(self, include_scattering: bool = False) -> np.ndarray:
        if include_scattering:
            if self.s_bar is None:
                raise ValueError("label carries no scattering values")
            return np.asarray(self.alpha_bar + self.s_bar, dtype=float)
        return np.asarray(self.alpha_bar, dtype=float)


def mean_absorption(spec: RoomSpec, with_scattering: bool = False) -> AbsorptionLabel:
    """Face-area-weighted mean of the six surface absorption profiles.

    When ``with_scattering`` is set, the label also carries the area-weighted
    mean scattering profile (used by the multi-task training target).
    """
    areas = spec.geometry.face_areas()
    weights = areas / areas.sum()
    alpha = weights @ spec.absorption_matrix()
    s_bar = None
    if with_scattering:
        s_bar = tuple(weights @ spec.scattering_matrix())
    return AbsorptionLabel(alpha_bar=tuple(alpha), s_bar=s_bar)
