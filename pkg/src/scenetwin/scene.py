"""Domain types shared by every pipeline stage.

All types are plain dataclasses over numpy arrays. Validation is explicit:
each type exposes ``violations()`` returning a list of human-readable
problems (empty when the invariants hold), and ``validate()`` which raises
ConfigError. Constructors only coerce array dtypes.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError

ELASTICITY_CATEGORIES = {
    "soft": 5.0e4,
    "medium": 5.0e5,
    "hard": 5.0e6,
}

COLLIDER_MODES = ("slip", "sticky", "separate")
MATERIAL_MODELS = ("elastic", "sand")


def elasticity_from_category(category):
    """Map an elasticity category name to a Young's modulus in Pa."""
    try:
        return ELASTICITY_CATEGORIES[category]
    except (KeyError, TypeError):
        raise ConfigError(
            f"unknown elasticity category {category!r}; "
            f"expected one of {sorted(ELASTICITY_CATEGORIES)}"
        ) from None


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def violations(self):
        out = []
        if not (self.fx > 0 and self.fy > 0):
            out.append("camera: focal lengths must be positive")
        if not (0 <= self.cx < self.width):
            out.append("camera: cx must lie in [0, width)")
        if not (0 <= self.cy < self.height):
            out.append("camera: cy must lie in [0, height)")
        if self.width <= 0 or self.height <= 0:
            out.append("camera: image dimensions must be positive")
        return out

    def validate(self):
        _raise_if(self.violations())
        return self

    def project(self, points):
        """Pinhole projection of camera-space points (N,3) -> pixels (N,2).

        Callers must handle points at or behind the camera (z <= 0)
        themselves; this just performs the perspective division.
        """
        p = np.asarray(points, dtype=np.float64)
        z = p[:, 2]
        u = self.fx * p[:, 0] / z + self.cx
        v = self.fy * p[:, 1] / z + self.cy
        return np.stack([u, v], axis=1)

    def unproject(self, pixels, depth):
        """Pixels (N,2) + per-pixel z depth (N,) -> camera-space points (N,3)."""
        px = np.asarray(pixels, dtype=np.float64)
        z = np.asarray(depth, dtype=np.float64)
        x = (px[:, 0] - self.cx) / self.fx * z
        y = (px[:, 1] - self.cy) / self.fy * z
        return np.stack([x, y, z], axis=1)


@dataclass
class TriangleMesh:
    vertices: np.ndarray        # (N,3) float64
    triangles: np.ndarray       # (M,3) int32, indices into vertices
    colors: Optional[np.ndarray] = None   # (N,3) float in [0,1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)

    def violations(self, name="mesh"):
        out = []
        if len(self.vertices) < 3:
            out.append(f"{name}: needs at least 3 vertices")
        if len(self.triangles) == 0:
            out.append(f"{name}: has no triangles")
        elif self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            out.append(f"{name}: triangle indices out of range")
        else:
            areas = self.triangle_areas()
            if np.any(areas <= 1e-14 * max(self.scale(), 1e-30) ** 2):
                out.append(f"{name}: contains degenerate (zero-area) triangles")
        if self.colors is not None and len(self.colors) != len(self.vertices):
            out.append(f"{name}: color count does not match vertex count")
        return out

    def validate(self, name="mesh"):
        _raise_if(self.violations(name))
        return self

    def validated(self, name="mesh"):
        """Copy with zero-area triangles dropped; raises on anything worse."""
        if len(self.vertices) < 3:
            raise ConfigError(f"{name}: needs at least 3 vertices")
        if len(self.triangles) and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ConfigError(f"{name}: triangle indices out of range")
        areas = self.triangle_areas()
        keep = areas > 1e-14 * max(self.scale(), 1e-30) ** 2
        if not np.any(keep):
            raise ConfigError(f"{name}: all triangles are degenerate")
        return TriangleMesh(self.vertices, self.triangles[keep], self.colors)

    def triangle_areas(self):
        v = self.vertices
        t = self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def scale(self):
        if len(self.vertices) == 0:
            return 0.0
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, pose):
        return TriangleMesh(pose.apply(self.vertices), self.triangles, self.colors)

    def vertex_normals(self):
        """Area-weighted smooth vertex normals, normalized."""
        v, t = self.vertices, self.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        vn = np.zeros_like(v)
        for k in range(3):
            np.add.at(vn, t[:, k], fn)
        norms = np.linalg.norm(vn, axis=1, keepdims=True)
        norms[norms < 1e-30] = 1.0
        return vn / norms


@dataclass
class DepthImage:
    values: np.ndarray   # (H,W) float64; invalid pixels are NaN or <= 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ConfigError("depth image must be a 2D array")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def valid(self):
        return np.isfinite(self.values) & (self.values > 0)

    def violations(self, name="depth"):
        return []  # invalidity is representable, nothing to reject


@dataclass
class MaskImage:
    values: np.ndarray   # (H,W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(bool)
        if self.values.ndim != 2:
            raise ConfigError("mask image must be a 2D array")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def count(self):
        return int(self.values.sum())


@dataclass
class MaterialSpec:
    density: float                      # kg/m^3
    elasticity: Optional[str] = None    # soft | medium | hard
    youngs_modulus: Optional[float] = None   # Pa, overrides category
    poisson_ratio: float = 0.2
    model: str = "elastic"
    requires_internal_fill: bool = False

    def resolved_youngs_modulus(self):
        if self.youngs_modulus is not None:
            return float(self.youngs_modulus)
        if self.elasticity is None:
            raise ConfigError("material: need elasticity category or youngs_modulus")
        return elasticity_from_category(self.elasticity)

    def violations(self, name="material"):
        out = []
        if not self.density > 0:
            out.append(f"{name}: density must be > 0")
        if self.youngs_modulus is None and self.elasticity is None:
            out.append(f"{name}: need elasticity category or youngs_modulus")
        elif self.elasticity is not None and self.elasticity not in ELASTICITY_CATEGORIES:
            out.append(
                f"{name}: unknown elasticity category {self.elasticity!r}"
            )
        if self.youngs_modulus is not None and not self.youngs_modulus > 0:
            out.append(f"{name}: youngs_modulus must be > 0")
        if not (0 <= self.poisson_ratio < 0.5):
            out.append(f"{name}: poisson_ratio must be < 0.5 and >= 0")
        if self.model not in MATERIAL_MODELS:
            out.append(f"{name}: unknown material model {self.model!r}")
        return out


@dataclass
class ColliderSurface:
    """Ground collider: a regular heightfield over the sim x/z plane.

    ``kind == "plane"`` is the analytic special case (constant height,
    normal +y); heightfield colliders carry the sampled grid.
    """

    kind: str = "plane"      # "plane" | "heightfield"
    friction: float = 0.0
    mode: str = "slip"
    plane_height: float = 0.0
    heights: Optional[np.ndarray] = None   # (nz, nx) heights along +y
    origin: tuple = (0.0, 0.0)             # (x0, z0) of heights[0,0]
    spacing: float = 1.0                   # grid step along x and z

    def __post_init__(self):
        if self.heights is not None:
            self.heights = np.asarray(self.heights, dtype=np.float64)

    def violations(self, name="collider"):
        out = []
        if self.kind not in ("plane", "heightfield"):
            out.append(f"{name}: unknown kind {self.kind!r}")
        if self.mode not in COLLIDER_MODES:
            out.append(f"{name}: unknown mode {self.mode!r}")
        if self.friction < 0:
            out.append(f"{name}: friction must be >= 0")
        if self.kind == "heightfield":
            if self.heights is None or self.heights.ndim != 2:
                out.append(f"{name}: heightfield collider needs a 2D heights grid")
            elif self.spacing <= 0:
                out.append(f"{name}: heightfield spacing must be > 0")
        return out

    def covers(self, domain_size):
        """True if the heightfield footprint spans [0, domain_size]^2 in x/z."""
        if self.kind == "plane" or self.heights is None:
            return True
        nz, nx = self.heights.shape
        x0, z0 = self.origin
        return (
            x0 <= 0
            and z0 <= 0
            and x0 + (nx - 1) * self.spacing >= domain_size
            and z0 + (nz - 1) * self.spacing >= domain_size
        )


@dataclass
class ScaleModel:
    k: Optional[float] = 1.0   # None -> resolve from object real_size at sample time
    g0: float = 9.8

    def violations(self, name="scale"):
        out = []
        if self.k is not None and not self.k > 0:
            out.append(f"{name}: k must be > 0")
        if self.g0 < 0:
            out.append(f"{name}: g0 must be >= 0")
        return out


@dataclass
class SimParams:
    domain_size: float = 2.0
    grid_resolution: int = 256
    dt: float = 2e-4
    substeps_per_frame: int = 200
    frame_count: int = 50
    gravity: Optional[np.ndarray] = None   # baseline f_ext; default (0, -g0, 0)

    def __post_init__(self):
        if self.gravity is not None:
            self.gravity = np.asarray(self.gravity, dtype=np.float64).reshape(3)

    @property
    def dx(self):
        return self.domain_size / self.grid_resolution

    def violations(self, name="sim"):
        out = []
        if not self.dt > 0:
            out.append(f"{name}: dt must be > 0")
        if self.grid_resolution < 8:
            out.append(f"{name}: grid_resolution must be >= 8")
        if not self.domain_size > 0:
            out.append(f"{name}: domain_size must be > 0")
        if self.substeps_per_frame < 1:
            out.append(f"{name}: substeps_per_frame must be >= 1")
        if self.frame_count < 1:
            out.append(f"{name}: frame_count must be >= 1")
        return out


@dataclass
class PoseEstimate:
    """Similarity transform placing object-space geometry into a target frame.

    apply(x) = scale * (rotation @ x) + translation
    """

    rotation: np.ndarray      # (3,3), orthonormal, det +1
    translation: np.ndarray   # (3,)
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)

    def violations(self, name="pose"):
        out = []
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            out.append(f"{name}: rotation is not orthonormal")
        elif np.linalg.det(self.rotation) < 0:
            out.append(f"{name}: rotation has negative determinant")
        if not self.scale > 0:
            out.append(f"{name}: scale must be > 0")
        return out

    def validate(self, name="pose"):
        _raise_if(self.violations(name))
        return self

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation

    def compose(self, other):
        """self after other: (self.compose(other)).apply(x) == self.apply(other.apply(x))."""
        return PoseEstimate(
            rotation=self.rotation @ other.rotation,
            translation=self.scale * (self.rotation @ other.translation) + self.translation,
            scale=self.scale * other.scale,
        )

    def inverse(self):
        Rt = self.rotation.T
        return PoseEstimate(
            rotation=Rt,
            translation=-(Rt @ self.translation) / self.scale,
            scale=1.0 / self.scale,
        )

    def with_scale_folded(self, s):
        """Rescale about the camera origin: t <- s*t, scale <- s*scale."""
        return PoseEstimate(self.rotation, s * self.translation, s * self.scale)


@dataclass
class LightSpec:
    kind: str = "directional"            # directional | point
    direction: Optional[np.ndarray] = None   # travel direction (toward scene)
    position: Optional[np.ndarray] = None
    intensity: float = 1.0
    ambient: float = 0.1

    def __post_init__(self):
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=np.float64).reshape(3)
            n = np.linalg.norm(d)
            self.direction = d / n if n > 0 else d
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=np.float64).reshape(3)

    def violations(self, name="light"):
        out = []
        if self.kind not in ("directional", "point"):
            out.append(f"{name}: unknown kind {self.kind!r}")
        if self.kind == "directional" and self.direction is None:
            out.append(f"{name}: directional light needs a direction")
        if self.kind == "point" and self.position is None:
            out.append(f"{name}: point light needs a position")
        if self.intensity < 0:
            out.append(f"{name}: intensity must be >= 0")
        if not (0 <= self.ambient <= 1):
            out.append(f"{name}: ambient must lie in [0,1]")
        return out


@dataclass
class RegistrationInputs:
    correspondences: Optional[str] = None   # path to "u v X Y Z" file
    mask: Optional[str] = None              # observed object mask PNG
    depth: Optional[str] = None             # observed depth raster


@dataclass
class ObjectSpec:
    object_id: str
    mesh: str
    material: MaterialSpec
    initial_pose: Optional[PoseEstimate] = None    # sim-space placement
    initial_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    color: Optional[np.ndarray] = None             # flat color fallback
    registration: Optional[RegistrationInputs] = None
    real_size: Optional[float] = None              # meters; feeds k = s'/s0

    def __post_init__(self):
        self.initial_velocity = np.asarray(self.initial_velocity, dtype=np.float64).reshape(3)
        if self.color is not None:
            self.color = np.asarray(self.color, dtype=np.float64).reshape(3)


@dataclass
class ColliderSpec:
    """Config-level collider source; resolved to a ColliderSurface lazily."""

    kind: str = "plane"
    height: float = 0.0
    depth: Optional[str] = None     # depth raster for heightfield colliders
    friction: float = 0.0
    mode: str = "slip"
    resolution: int = 64            # heightfield resample resolution


@dataclass
class SceneConfig:
    camera: CameraIntrinsics
    objects: list
    collider: ColliderSpec
    light: LightSpec
    scale: ScaleModel = field(default_factory=ScaleModel)
    sim: SimParams = field(default_factory=SimParams)
    camera_to_sim: PoseEstimate = field(default_factory=PoseEstimate.identity)
    background_plate: Optional[str] = None
    reference_image: Optional[str] = None
    track_stride: int = 1
    base_dir: str = field(default=".", compare=False)

    def object_by_id(self, object_id):
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise ConfigError(f"unknown object id {object_id!r}")

    def gravity_baseline(self):
        if self.sim.gravity is not None:
            return self.sim.gravity
        return np.array([0.0, -self.scale.g0, 0.0])


def _raise_if(violations):
    if violations:
        raise ConfigError("; ".join(violations))
