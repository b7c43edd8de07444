"""Simulation state and the p2g / grid / g2p stepping loop.

The grid is dense but every substep only touches the axis-aligned node
box covering the particles, so large default resolutions stay usable.
All kernels are single-threaded: two runs over the same inputs produce
bit-identical states.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DivergenceError, SceneTwinError
from ..scene import ColliderSurface
from . import kernels
from .materials import apply_dimensionless_scaling, lame_parameters

log = logging.getLogger(__name__)

_MODEL_CODE = {"elastic": kernels.MODEL_ELASTIC, "sand": kernels.MODEL_SAND}
_MODE_CODE = {"slip": kernels.MODE_SLIP, "sticky": kernels.MODE_STICKY,
              "separate": kernels.MODE_SEPARATE}


def bspline_weights(fx):
    """Quadratic B-spline weights per axis.

    fx is the fractional offset (x/dx - base) and must lie in [0.5, 1.5];
    values outside mean the particle escaped its 3x3x3 neighborhood.
    Scalar input returns shape (3,); a length-d vector returns (3, d).
    """
    arr = np.asarray(fx, dtype=np.float64)
    if np.any(arr < 0.5) or np.any(arr > 1.5):
        raise SceneTwinError(
            f"bspline offset out of range [0.5, 1.5]: {arr!r} "
            "(particle escaped the margin band)"
        )
    return np.stack([
        0.5 * (1.5 - arr) ** 2,
        0.75 - (arr - 1.0) ** 2,
        0.5 * (arr - 0.5) ** 2,
    ])


def particle_stress(def_grad, lame):
    """Reference corotated stress: 2 mu (F - R) F^T + lambda J (J-1) I.

    R is the polar rotation from the SVD with the reflection fixed so
    det(R) = +1. Raises on element inversion (det(F) <= 0).
    """
    F = np.asarray(def_grad, dtype=np.float64).reshape(3, 3)
    J = float(np.linalg.det(F))
    if J <= 0:
        raise DivergenceError(f"element inversion: det(F) = {J:g} <= 0")
    U, _, Vt = np.linalg.svd(F)
    if np.linalg.det(U @ Vt) < 0:
        U = U.copy()
        U[:, -1] *= -1
    R = U @ Vt
    lame_term = lame.lam * J * (J - 1.0) * np.eye(3)
    return 2.0 * lame.mu * (F - R) @ F.T + lame_term


@dataclass
class SimGrid:
    resolution: int
    dx: float
    mass: np.ndarray = None       # (n,n,n)
    velocity: np.ndarray = None   # (n,n,n,3); holds momentum between p2g and update

    def __post_init__(self):
        n = self.resolution
        if self.mass is None:
            self.mass = np.zeros((n, n, n))
        if self.velocity is None:
            self.velocity = np.zeros((n, n, n, 3))

    def clear_box(self, box):
        (l0, l1, l2), (h0, h1, h2) = box
        self.mass[l0:h0, l1:h1, l2:h2] = 0.0
        self.velocity[l0:h0, l1:h1, l2:h2, :] = 0.0

    def total_mass(self):
        return float(self.mass.sum())

    def total_momentum(self):
        """Valid right after p2g, while velocity still stores momentum."""
        return self.velocity.reshape(-1, 3).sum(axis=0)


@dataclass
class SimState:
    cloud: object
    grid: SimGrid
    dt: float
    gravity: np.ndarray
    lam_p: np.ndarray
    mu_p: np.ndarray
    model_p: np.ndarray
    collider: ColliderSurface = None
    clamp_inversion: bool = False
    sand_friction_angle: float = 35.0
    time: float = 0.0
    step_index: int = 0
    clamped_events: int = 0

    @property
    def sand_alpha(self):
        phi = np.radians(self.sand_friction_angle)
        return np.sqrt(2.0 / 3.0) * 2.0 * np.sin(phi) / (3.0 - np.sin(phi))

    def active_box(self):
        """Node index box covering every particle's 3x3x3 neighborhood."""
        n = self.grid.resolution
        pos = self.cloud.positions
        base_lo = np.floor(pos.min(axis=0) / self.grid.dx - 0.5).astype(int) - 1
        base_hi = np.floor(pos.max(axis=0) / self.grid.dx - 0.5).astype(int) + 4
        lo = np.clip(base_lo, 0, n)
        hi = np.clip(base_hi, 0, n)
        return tuple(lo), tuple(hi)


def make_state(cloud, sim_params, materials, gravity, collider=None,
               clamp_inversion=False, sand_friction_angle=35.0):
    """Build a SimState; materials is one MaterialSpec per material index."""
    lam_p = np.zeros(len(cloud))
    mu_p = np.zeros(len(cloud))
    model_p = np.zeros(len(cloud), dtype=np.int8)
    for idx, mat in enumerate(materials):
        lame = lame_parameters(mat.resolved_youngs_modulus(), mat.poisson_ratio)
        sel = cloud.material == idx
        lam_p[sel] = lame.lam
        mu_p[sel] = lame.mu
        model_p[sel] = _MODEL_CODE[mat.model]
    grid = SimGrid(sim_params.grid_resolution, sim_params.dx)
    return SimState(
        cloud=cloud,
        grid=grid,
        dt=sim_params.dt,
        gravity=np.asarray(gravity, dtype=np.float64).reshape(3),
        lam_p=lam_p,
        mu_p=mu_p,
        model_p=model_p,
        collider=collider,
        clamp_inversion=clamp_inversion,
        sand_friction_angle=sand_friction_angle,
    )


def _collider_args(collider):
    dummy = np.zeros((1, 1))
    if collider is None:
        return (kernels.COLLIDER_NONE, 0, 0.0, 0.0, dummy, 0.0, 0.0, 1.0)
    mode = _MODE_CODE[collider.mode]
    if collider.kind == "plane":
        return (kernels.COLLIDER_PLANE, mode, float(collider.friction),
                float(collider.plane_height), dummy, 0.0, 0.0, 1.0)
    return (kernels.COLLIDER_HEIGHTFIELD, mode, float(collider.friction), 0.0,
            np.ascontiguousarray(collider.heights, dtype=np.float64),
            float(collider.origin[0]), float(collider.origin[1]),
            float(collider.spacing))


def clear_grid(state, box=None):
    state.grid.clear_box(box if box is not None else state.active_box())


def transfer_p2g(state):
    """Scatter particles to the (cleared) grid; velocity stores momentum."""
    c = state.cloud
    status, bad = kernels.transfer_p2g(
        c.positions, c.velocities, c.masses, c.volumes, c.def_grad, c.affine,
        state.lam_p, state.mu_p,
        state.grid.mass, state.grid.velocity,
        state.grid.resolution, state.grid.dx, 1.0 / state.grid.dx, state.dt,
    )
    _raise_status(status, bad, state)


def grid_update(state, box=None):
    """Momentum -> velocity with gravity, boundary band, collider response."""
    (l0, l1, l2), (h0, h1, h2) = box if box is not None else state.active_box()
    col = _collider_args(state.collider)
    g = state.gravity
    kernels.grid_update(
        state.grid.mass, state.grid.velocity,
        l0, l1, l2, h0, h1, h2,
        state.grid.resolution, state.grid.dx, state.dt, g[0], g[1], g[2],
        *col,
    )


def transfer_g2p(state):
    """Gather grid velocities back, update F/C, advect particles."""
    c = state.cloud
    status, bad, clamped = kernels.transfer_g2p(
        c.positions, c.velocities, c.def_grad, c.affine,
        state.lam_p, state.mu_p, state.model_p,
        state.grid.velocity,
        state.grid.resolution, state.grid.dx, 1.0 / state.grid.dx, state.dt,
        state.clamp_inversion, state.sand_alpha,
    )
    if clamped:
        state.clamped_events += clamped
        log.warning(
            "step %d: clamped %d particle coordinates at the domain margin",
            state.step_index, clamped,
        )
    _raise_status(status, bad, state)


def _raise_status(status, particle, state):
    if status == kernels.STATUS_OK:
        return
    if status == kernels.STATUS_INVERSION:
        raise DivergenceError(
            f"element inversion at particle {particle} (step {state.step_index}); "
            "enable clamp_inversion for collapse-style effects"
        )
    if status == kernels.STATUS_MARGIN:
        raise DivergenceError(
            f"particle {particle} outside the domain margin at step {state.step_index}"
        )
    raise DivergenceError(f"simulation diverged at step {state.step_index}")


def step(state):
    """Advance one substep: clear -> p2g -> grid update -> g2p."""
    box = state.active_box()
    clear_grid(state, box)
    transfer_p2g(state)
    grid_update(state, box)
    transfer_g2p(state)
    state.step_index += 1
    state.time = state.step_index * state.dt
    return state


def set_initial_velocity(cloud, object_ref, velocity, velocity_scale=1.0):
    """Assign k-scaled velocity to every particle of one object."""
    if isinstance(object_ref, str):
        if object_ref not in cloud.object_names:
            raise ConfigError(f"unknown object id {object_ref!r}")
        index = cloud.object_names.index(object_ref)
    else:
        index = int(object_ref)
        if index < 0 or (cloud.object_names and index >= len(cloud.object_names)):
            raise ConfigError(f"unknown object index {index}")
    sel = cloud.object_ids == index
    if not sel.any():
        raise ConfigError(f"object {object_ref!r} has no particles")
    cloud.velocities[sel] = velocity_scale * np.asarray(velocity, dtype=np.float64)


def simulate(cfg, particles, collider=None, scale_k=None, clamp_inversion=False):
    """Run the configured simulation; yields (frame_index, snapshot).

    frame 0 is the initial state; frame j is after j * substeps_per_frame
    substeps. Snapshots are deep copies. Raises DivergenceError carrying
    the last good frame index on blow-up.
    """
    k = scale_k if scale_k is not None else cfg.scale.k
    if k is None:
        raise ConfigError("scale.k unresolved: pass scale_k or set it in the config")
    scale = type(cfg.scale)(k=k, g0=cfg.scale.g0)
    materials = [o.material for o in cfg.objects]
    g_vec, scaled_materials = apply_dimensionless_scaling(scale, materials)
    if cfg.sim.gravity is not None:
        gravity = k * cfg.sim.gravity   # explicit baseline overrides the default
    else:
        gravity = g_vec

    if collider is None:
        collider = build_collider(cfg)

    by_name = {o.object_id: m for o, m in zip(cfg.objects, scaled_materials)}
    ordered = [by_name[name] for name in particles.object_names] if particles.object_names \
        else scaled_materials
    state = make_state(particles, cfg.sim, ordered, gravity, collider,
                       clamp_inversion=clamp_inversion)

    yield 0, state.cloud.copy()
    for frame in range(1, cfg.sim.frame_count):
        try:
            for _ in range(cfg.sim.substeps_per_frame):
                step(state)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), last_good_frame=frame - 1) from None
        yield frame, state.cloud.copy()


def build_collider(cfg):
    """Resolve the config collider spec into a ColliderSurface."""
    spec = cfg.collider
    if spec.kind == "plane":
        return ColliderSurface(
            kind="plane", friction=spec.friction, mode=spec.mode,
            plane_height=spec.height,
        )
    from .. import assets, config as config_mod
    from ..heightfields import collider_from_depth

    if spec.depth is None:
        raise ConfigError("heightfield collider needs a depth path")
    depth = assets.read_depth_raster(config_mod.resolve_path(cfg, spec.depth))
    return collider_from_depth(
        depth, cfg.camera, cfg.camera_to_sim, cfg.sim.domain_size,
        spec.resolution, friction=spec.friction, mode=spec.mode,
    )
