"""Constitutive parameters and the dimensionless scale rule."""

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError


@dataclass
class LameParams:
    lam: float   # Pa
    mu: float    # Pa


def lame_parameters(youngs_modulus, poisson_ratio):
    """lambda = E nu / ((1+nu)(1-2nu)), mu = E / (2(1+nu))."""
    E = float(youngs_modulus)
    nu = float(poisson_ratio)
    if E <= 0:
        raise ConfigError("youngs modulus must be > 0")
    if not 0 <= nu < 0.5:
        raise ConfigError("poisson ratio must lie in [0, 0.5); lambda diverges at 0.5")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return LameParams(lam=lam, mu=mu)


def apply_dimensionless_scaling(scale, materials):
    """Scale gravity and stiffness for a miniaturized scene.

    Returns (g_vec, scaled_materials): gravity becomes k * g0 pointing
    down (-y) and every Young's modulus is divided by k before the Lame
    conversion. Velocity-related config values are scaled by k where they
    are applied (see set_initial_velocity).
    """
    if scale.k is None:
        raise ConfigError("scale.k is unresolved; resolve it before scaling")
    k = float(scale.k)
    if k <= 0:
        raise ConfigError("scale.k must be > 0")
    g_vec = np.array([0.0, -k * scale.g0, 0.0])
    scaled = [
        replace(m, youngs_modulus=m.resolved_youngs_modulus() / k, elasticity=None)
        for m in materials
    ]
    return g_vec, scaled
