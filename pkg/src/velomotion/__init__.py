"""Finite-velocity random motions: simulation, exact laws and PDE checks."""
from .errors import *  # noqa: F401,F403
from .geometry import VelocitySet, build_projection, classify_point, state_space_dim
from .model import MotionModel, complete_canonical, cyclic_canonical
from .stochastic import RateFunction, SwitchKernel, WaitingTimeModel

__version__ = "0.1.0"
