"""Simulation and verification tools for the dynamic ASEP and its Ornstein-Uhlenbeck limit."""
from .lattice import HeightFunction, LineWindow, Ring, new_height
from .model import ModelParams, cosine_perturbed_rate, identity_rate, jump_rates
from .rng import stream
from .sim import Trajectory, simulate, step_event

__version__ = "0.1.0"

__all__ = [
    "HeightFunction",
    "LineWindow",
    "ModelParams",
    "Ring",
    "Trajectory",
    "cosine_perturbed_rate",
    "identity_rate",
    "jump_rates",
    "new_height",
    "simulate",
    "step_event",
    "stream",
]
