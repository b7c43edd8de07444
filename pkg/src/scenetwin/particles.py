"""Particle cloud state (struct-of-arrays) and PLY snapshot IO.

Snapshot format: binary little-endian PLY with per-vertex properties
x,y,z,vx,vy,vz (double), object_id (int), is_surface (uchar). Comment
lines map object indices back to their config ids. Deformation gradients
and affine matrices are not serialized: snapshots either seed a fresh
simulation (F=I, C=0) or feed deformation/rendering, which only needs
positions.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SamplingError


@dataclass
class ParticleCloud:
    positions: np.ndarray      # (N,3)
    velocities: np.ndarray     # (N,3)
    masses: np.ndarray         # (N,)
    volumes: np.ndarray        # (N,)
    def_grad: np.ndarray       # (N,3,3)
    affine: np.ndarray         # (N,3,3)
    material: np.ndarray       # (N,) int32, index into the material table
    object_ids: np.ndarray     # (N,) int32, index into object_names
    is_surface: np.ndarray     # (N,) bool
    object_names: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64).reshape(n, 3)
        self.masses = np.ascontiguousarray(self.masses, dtype=np.float64).reshape(n)
        self.volumes = np.ascontiguousarray(self.volumes, dtype=np.float64).reshape(n)
        self.def_grad = np.ascontiguousarray(self.def_grad, dtype=np.float64).reshape(n, 3, 3)
        self.affine = np.ascontiguousarray(self.affine, dtype=np.float64).reshape(n, 3, 3)
        self.material = np.ascontiguousarray(self.material, dtype=np.int32).reshape(n)
        self.object_ids = np.ascontiguousarray(self.object_ids, dtype=np.int32).reshape(n)
        self.is_surface = np.ascontiguousarray(self.is_surface, dtype=bool).reshape(n)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def zeros(cls, n, object_names=None):
        eye = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return cls(
            positions=np.zeros((n, 3)),
            velocities=np.zeros((n, 3)),
            masses=np.ones(n),
            volumes=np.ones(n),
            def_grad=eye,
            affine=np.zeros((n, 3, 3)),
            material=np.zeros(n, dtype=np.int32),
            object_ids=np.zeros(n, dtype=np.int32),
            is_surface=np.zeros(n, dtype=bool),
            object_names=list(object_names or []),
        )

    @classmethod
    def concatenate(cls, clouds):
        if not clouds:
            raise SamplingError("cannot concatenate zero particle clouds")
        names = []
        for c in clouds:
            names.extend(c.object_names)
        offsets = np.cumsum([0] + [len(c.object_names) for c in clouds[:-1]])
        return cls(
            positions=np.concatenate([c.positions for c in clouds]),
            velocities=np.concatenate([c.velocities for c in clouds]),
            masses=np.concatenate([c.masses for c in clouds]),
            volumes=np.concatenate([c.volumes for c in clouds]),
            def_grad=np.concatenate([c.def_grad for c in clouds]),
            affine=np.concatenate([c.affine for c in clouds]),
            material=np.concatenate(
                [c.material + off for c, off in zip(clouds, offsets)]
            ).astype(np.int32),
            object_ids=np.concatenate(
                [c.object_ids + off for c, off in zip(clouds, offsets)]
            ).astype(np.int32),
            is_surface=np.concatenate([c.is_surface for c in clouds]),
            object_names=names,
        )

    def copy(self):
        return ParticleCloud(
            self.positions.copy(), self.velocities.copy(), self.masses.copy(),
            self.volumes.copy(), self.def_grad.copy(), self.affine.copy(),
            self.material.copy(), self.object_ids.copy(), self.is_surface.copy(),
            list(self.object_names),
        )

    def select(self, index):
        return ParticleCloud(
            self.positions[index], self.velocities[index], self.masses[index],
            self.volumes[index], self.def_grad[index], self.affine[index],
            self.material[index], self.object_ids[index], self.is_surface[index],
            list(self.object_names),
        )

    # diagnostics ----------------------------------------------------------

    def total_mass(self):
        return float(self.masses.sum())

    def total_momentum(self):
        return (self.masses[:, None] * self.velocities).sum(axis=0)

    def max_speed(self):
        if len(self) == 0:
            return 0.0
        return float(np.sqrt((self.velocities ** 2).sum(axis=1).max()))

    def kinetic_energy(self):
        return float(0.5 * (self.masses * (self.velocities ** 2).sum(axis=1)).sum())

    def violations(self, sim=None, initial=False):
        """Invariant check used by tests and the sampling stage."""
        out = []
        if len(self) == 0:
            out.append("particles: cloud is empty")
            return out
        if not np.all(self.masses > 0):
            out.append("particles: non-positive mass")
        if not np.all(np.isfinite(self.positions)):
            out.append("particles: non-finite position")
        if not np.all(np.isfinite(self.velocities)):
            out.append("particles: non-finite velocity")
        if initial:
            eye = np.eye(3)
            if np.abs(self.def_grad - eye).max() > 0:
                out.append("particles: deformation gradient not identity")
            if np.abs(self.affine).max() > 0:
                out.append("particles: affine matrix not zero")
        if sim is not None:
            margin = 3.0 * sim.dx
            lo = self.positions.min(axis=0)
            hi = self.positions.max(axis=0)
            if lo.min() < margin or hi.max() > sim.domain_size - margin:
                out.append(
                    "particles: positions outside the 3-cell domain margin"
                )
        return out


def write_particles(path, cloud):
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0"]
    for idx, name in enumerate(cloud.object_names):
        header.append(f"comment object {idx} {name}")
    header += [
        f"element vertex {n}",
        "property double x", "property double y", "property double z",
        "property double vx", "property double vy", "property double vz",
        "property int object_id",
        "property uchar is_surface",
        "end_header",
    ]
    dt = np.dtype([
        ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
        ("vx", "<f8"), ("vy", "<f8"), ("vz", "<f8"),
        ("object_id", "<i4"), ("is_surface", "u1"),
    ])
    rec = np.empty(n, dtype=dt)
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    rec["vx"], rec["vy"], rec["vz"] = cloud.velocities.T
    rec["object_id"] = cloud.object_ids
    rec["is_surface"] = cloud.is_surface.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_particles(path):
    """Read a snapshot back; F/C reset to identity/zero, masses to 1.

    Callers that need simulation-ready masses/volumes assign them from the
    scene config afterwards (see cli.apply_config_masses).
    """
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ConfigError(f"{path}: not a PLY file")
        names = {}
        count = None
        props = []
        while True:
            line = fh.readline()
            if not line:
                raise ConfigError(f"{path}: truncated header")
            parts = line.decode("ascii", "replace").split()
            if not parts:
                continue
            if parts[0] == "comment" and len(parts) >= 4 and parts[1] == "object":
                names[int(parts[2])] = " ".join(parts[3:])
            elif parts[0] == "format" and parts[1] != "binary_little_endian":
                raise ConfigError(f"{path}: expected binary_little_endian")
            elif parts[0] == "element":
                if parts[1] != "vertex":
                    raise ConfigError(f"{path}: unexpected element {parts[1]}")
                count = int(parts[2])
            elif parts[0] == "property":
                props.append((parts[2], parts[1]))
            elif parts[0] == "end_header":
                break
        expected = [
            ("x", "double"), ("y", "double"), ("z", "double"),
            ("vx", "double"), ("vy", "double"), ("vz", "double"),
            ("object_id", "int"), ("is_surface", "uchar"),
        ]
        if props != expected or count is None:
            raise ConfigError(f"{path}: unexpected particle PLY layout")
        dt = np.dtype([
            ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
            ("vx", "<f8"), ("vy", "<f8"), ("vz", "<f8"),
            ("object_id", "<i4"), ("is_surface", "u1"),
        ])
        buf = fh.read(count * dt.itemsize)
        if len(buf) != count * dt.itemsize:
            raise ConfigError(f"{path}: truncated particle data")
    rec = np.frombuffer(buf, dtype=dt)
    cloud = ParticleCloud.zeros(count)
    cloud.positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    cloud.velocities = np.stack([rec["vx"], rec["vy"], rec["vz"]], axis=1)
    cloud.object_ids = rec["object_id"].astype(np.int32)
    cloud.material = cloud.object_ids.copy()
    cloud.is_surface = rec["is_surface"].astype(bool)
    if names:
        cloud.object_names = [names[i] for i in sorted(names)]
    return cloud
