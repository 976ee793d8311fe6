"""Room acoustics toolkit: annotated shoebox RIR simulation, classical
reverberation-based absorption estimation, and neural regressors trained
directly on simulated impulse responses."""

from .core import (
    BAND_CENTERS,
    SURFACE_NAMES,
    AbsorptionLabel,
    BandProfile,
    InvalidRoomError,
    RoomGeometry,
    RoomSpec,
    Surface,
    mean_absorption,
)
from .simulator import Rir, SimConfig, simulate, simulate_with_echogram

__all__ = [
    "BAND_CENTERS",
    "SURFACE_NAMES",
    "AbsorptionLabel",
    "BandProfile",
    "InvalidRoomError",
    "RoomGeometry",
    "RoomSpec",
    "Surface",
    "Rir",
    "SimConfig",
    "mean_absorption",
    "simulate",
    "simulate_with_echogram",
]

__version__ = "0.1.0"
