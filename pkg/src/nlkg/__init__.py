"""Numerical laboratory for the radial focusing cubic Klein-Gordon equation in 3D."""
from .radial import RadialGrid, RadialField, State
from .ground_state import GroundStateData, load_or_build, shoot_Q
from .linearized import SpectralData, spectral_data
from .functionals import ThresholdParams, energy, K_functionals, distance_dQ, sign_functional
from .evolution import Fate, FateKind, StepControl, TrajectoryRecord, evolve
from .lab import Lab, classify_nine, nine_set_witnesses, bisect_separatrix

__version__ = "0.1.0"

__all__ = ["RadialGrid", "RadialField", "State", "GroundStateData", "load_or_build", "shoot_Q",
           "SpectralData", "spectral_data", "ThresholdParams", "energy", "K_functionals",
           "distance_dQ", "sign_functional", "Fate", "FateKind", "StepControl",
           "TrajectoryRecord", "evolve", "Lab", "classify_nine", "nine_set_witnesses",
           "bisect_separatrix"]
