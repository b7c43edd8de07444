"""MLS-MPM simulation core."""

from .materials import LameParams, apply_dimensionless_scaling, lame_parameters
from .sim import (
    SimGrid,
    SimState,
    bspline_weights,
    build_collider,
    clear_grid,
    grid_update,
    make_state,
    particle_stress,
    set_initial_velocity,
    simulate,
    step,
    transfer_g2p,
    transfer_p2g,
)

__all__ = [
    "LameParams",
    "SimGrid",
    "SimState",
    "apply_dimensionless_scaling",
    "bspline_weights",
    "build_collider",
    "clear_grid",
    "grid_update",
    "lame_parameters",
    "make_state",
    "particle_stress",
    "set_initial_velocity",
    "simulate",
    "step",
    "transfer_g2p",
    "transfer_p2g",
]
