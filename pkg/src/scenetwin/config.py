"""Scene config parsing, serialization and validation.

The on-disk format is YAML. Parsing is strict: unknown keys are rejected
with their full dotted path so typos in physical parameters fail loudly
instead of silently falling back to defaults.
"""

import hashlib
import os

import numpy as np
import yaml

from .errors import ConfigError
from .scene import (
    CameraIntrinsics,
    ColliderSpec,
    LightSpec,
    MaterialSpec,
    ObjectSpec,
    PoseEstimate,
    RegistrationInputs,
    ScaleModel,
    SceneConfig,
    SimParams,
)

_MISSING = object()


class _Reader:
    """Typed accessor over one YAML mapping that tracks consumed keys."""

    def __init__(self, mapping, path):
        if mapping is None:
            mapping = {}
        if not isinstance(mapping, dict):
            raise ConfigError(f"config field {path or '<root>'}: expected a mapping")
        self.mapping = mapping
        self.path = path
        self.seen = set()

    def _label(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, typ, default=_MISSING, required=False):
        if key not in self.mapping:
            if required:
                raise ConfigError(f"config: missing required field {self._label(key)}")
            return None if default is _MISSING else default
        self.seen.add(key)
        value = self.mapping[key]
        if value is None:
            return None if default is _MISSING else default
        try:
            if typ is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValueError
                return float(value)
            if typ is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError
                return int(value)
            if typ is bool:
                if not isinstance(value, bool):
                    raise ValueError
                return value
            if typ is str:
                if not isinstance(value, str):
                    raise ValueError
                return value
        except ValueError:
            raise ConfigError(
                f"config field {self._label(key)}: expected {typ.__name__}, "
                f"got {value!r}"
            ) from None
        raise AssertionError(f"unsupported reader type {typ}")

    def vector(self, key, length, default=_MISSING, required=False):
        if key not in self.mapping:
            if required:
                raise ConfigError(f"config: missing required field {self._label(key)}")
            return None if default is _MISSING else default
        self.seen.add(key)
        value = self.mapping[key]
        ok = isinstance(value, (list, tuple)) and len(value) == length and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
        if not ok:
            raise ConfigError(
                f"config field {self._label(key)}: expected a list of {length} numbers"
            )
        return np.array(value, dtype=np.float64)

    def matrix3(self, key, required=False):
        if key not in self.mapping:
            if required:
                raise ConfigError(f"config: missing required field {self._label(key)}")
            return None
        self.seen.add(key)
        value = self.mapping[key]
        ok = (
            isinstance(value, (list, tuple))
            and len(value) == 3
            and all(
                isinstance(row, (list, tuple))
                and len(row) == 3
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row)
                for row in value
            )
        )
        if not ok:
            raise ConfigError(
                f"config field {self._label(key)}: expected a 3x3 matrix (list of rows)"
            )
        return np.array(value, dtype=np.float64)

    def child(self, key, required=False):
        if key not in self.mapping or self.mapping[key] is None:
            if required:
                raise ConfigError(f"config: missing required section {self._label(key)}")
            self.seen.add(key)
            return _Reader({}, self._label(key))
        self.seen.add(key)
        return _Reader(self.mapping[key], self._label(key))

    def children_list(self, key, required=False):
        if key not in self.mapping:
            if required:
                raise ConfigError(f"config: missing required section {self._label(key)}")
            return []
        self.seen.add(key)
        value = self.mapping[key]
        if not isinstance(value, list):
            raise ConfigError(f"config field {self._label(key)}: expected a list")
        return [_Reader(item, f"{self._label(key)}[{i}]") for i, item in enumerate(value)]

    def finish(self):
        unknown = sorted(set(self.mapping) - self.seen)
        if unknown:
            names = ", ".join(self._label(k) for k in unknown)
            raise ConfigError(f"config: unknown field(s): {names}")


def _raise_violations(violations):
    if violations:
        raise ConfigError("; ".join(violations))


def _parse_camera(r):
    cam = CameraIntrinsics(
        fx=r.get("fx", float, required=True),
        fy=r.get("fy", float, required=True),
        cx=r.get("cx", float, required=True),
        cy=r.get("cy", float, required=True),
        width=r.get("width", int, required=True),
        height=r.get("height", int, required=True),
    )
    r.finish()
    _raise_violations(cam.violations())
    return cam


def _parse_material(r, name):
    mat = MaterialSpec(
        density=r.get("density", float, required=True),
        elasticity=r.get("elasticity", str, None),
        youngs_modulus=r.get("youngs_modulus", float, None),
        poisson_ratio=r.get("poisson_ratio", float, 0.2),
        model=r.get("model", str, "elastic"),
        requires_internal_fill=r.get("requires_internal_fill", bool, False),
    )
    r.finish()
    _raise_violations(mat.violations(name))
    return mat


def _parse_pose(r, default_identity=False):
    if not r.mapping:
        r.finish()
        return PoseEstimate.identity() if default_identity else None
    pose = PoseEstimate(
        rotation=r.matrix3("rotation") if "rotation" in r.mapping else np.eye(3),
        translation=r.vector("translation", 3, default=np.zeros(3)),
        scale=r.get("scale", float, 1.0),
    )
    r.finish()
    _raise_violations(pose.violations(r.path or "pose"))
    return pose


def _parse_registration(r):
    if not r.mapping:
        r.finish()
        return None
    reg = RegistrationInputs(
        correspondences=r.get("correspondences", str, None),
        mask=r.get("mask", str, None),
        depth=r.get("depth", str, None),
    )
    r.finish()
    return reg


_ID_CHARS = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-"
)


def _parse_object(r):
    name = r.get("id", str, required=True)
    if not name or not set(name) <= _ID_CHARS:
        raise ConfigError(
            f"config field {r._label('id')}: object ids must be non-empty and "
            "use only letters, digits, '_' or '-' (they name output files)"
        )
    obj = ObjectSpec(
        object_id=name,
        mesh=r.get("mesh", str, required=True),
        material=_parse_material(r.child("material", required=True), f"object {name!r}"),
        initial_pose=_parse_pose(r.child("initial_pose")),
        initial_velocity=r.vector("initial_velocity", 3, default=np.zeros(3)),
        color=r.vector("color", 3, default=None),
        registration=_parse_registration(r.child("registration")),
        real_size=r.get("real_size", float, None),
    )
    r.finish()
    return obj


def _parse_collider(r):
    col = ColliderSpec(
        kind=r.get("kind", str, "plane"),
        height=r.get("height", float, 0.0),
        depth=r.get("depth", str, None),
        friction=r.get("friction", float, 0.0),
        mode=r.get("mode", str, "slip"),
        resolution=r.get("resolution", int, 64),
    )
    r.finish()
    if col.kind not in ("plane", "heightfield"):
        raise ConfigError(f"config field collider.kind: unknown kind {col.kind!r}")
    if col.mode not in ("slip", "sticky", "separate"):
        raise ConfigError(f"config field collider.mode: unknown mode {col.mode!r}")
    return col


def _parse_light(r):
    light = LightSpec(
        kind=r.get("kind", str, "directional"),
        direction=r.vector("direction", 3, default=None),
        position=r.vector("position", 3, default=None),
        intensity=r.get("intensity", float, 1.0),
        ambient=r.get("ambient", float, 0.1),
    )
    if light.kind == "directional" and light.direction is None:
        light.direction = np.array([0.0, 0.0, 1.0])
    r.finish()
    _raise_violations(light.violations("light"))
    return light


def _parse_scale(r):
    raw_k = r.mapping.get("k", 1.0)
    if isinstance(raw_k, str):
        if raw_k != "auto":
            raise ConfigError(
                f"config field {r.path}.k: expected a number or 'auto', got {raw_k!r}"
            )
        r.seen.add("k")
        k = None
    else:
        k = r.get("k", float, 1.0)
    scale = ScaleModel(k=k, g0=r.get("g0", float, 9.8))
    r.finish()
    _raise_violations(scale.violations("scale"))
    return scale


def _parse_sim(r):
    sim = SimParams(
        domain_size=r.get("domain_size", float, 2.0),
        grid_resolution=r.get("grid_resolution", int, 256),
        dt=r.get("dt", float, 2e-4),
        substeps_per_frame=r.get("substeps_per_frame", int, 200),
        frame_count=r.get("frame_count", int, 50),
        gravity=r.vector("gravity", 3, default=None),
    )
    r.finish()
    _raise_violations(sim.violations("sim"))
    return sim


def parse_scene_config(text, base_dir="."):
    """Parse a YAML scene document into a SceneConfig with defaults applied."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"config parse error{loc}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")

    r = _Reader(raw, "")
    cfg = SceneConfig(
        camera=_parse_camera(r.child("camera", required=True)),
        objects=[_parse_object(item) for item in r.children_list("objects", required=True)],
        collider=_parse_collider(r.child("collider")),
        light=_parse_light(r.child("light")),
        scale=_parse_scale(r.child("scale")),
        sim=_parse_sim(r.child("sim")),
        camera_to_sim=_parse_pose(r.child("camera_to_sim"), default_identity=True),
        background_plate=r.get("background_plate", str, None),
        reference_image=r.get("reference_image", str, None),
        track_stride=r.get("track_stride", int, 1),
        base_dir=base_dir,
    )
    r.finish()
    if not cfg.objects:
        raise ConfigError("config: objects list must not be empty")
    return cfg


def load_scene_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_scene_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _pose_doc(pose):
    return {
        "rotation": [[float(v) for v in row] for row in pose.rotation],
        "translation": [float(v) for v in pose.translation],
        "scale": float(pose.scale),
    }


def _object_doc(obj):
    doc = {
        "id": obj.object_id,
        "mesh": obj.mesh,
        "material": {
            "density": float(obj.material.density),
            "poisson_ratio": float(obj.material.poisson_ratio),
            "model": obj.material.model,
            "requires_internal_fill": bool(obj.material.requires_internal_fill),
        },
        "initial_velocity": [float(v) for v in obj.initial_velocity],
    }
    if obj.material.elasticity is not None:
        doc["material"]["elasticity"] = obj.material.elasticity
    if obj.material.youngs_modulus is not None:
        doc["material"]["youngs_modulus"] = float(obj.material.youngs_modulus)
    if obj.initial_pose is not None:
        doc["initial_pose"] = _pose_doc(obj.initial_pose)
    if obj.color is not None:
        doc["color"] = [float(v) for v in obj.color]
    if obj.registration is not None:
        reg = {}
        if obj.registration.correspondences is not None:
            reg["correspondences"] = obj.registration.correspondences
        if obj.registration.mask is not None:
            reg["mask"] = obj.registration.mask
        if obj.registration.depth is not None:
            reg["depth"] = obj.registration.depth
        doc["registration"] = reg
    if obj.real_size is not None:
        doc["real_size"] = float(obj.real_size)
    return doc


def serialize_scene_config(cfg):
    """Canonical YAML for a SceneConfig; parse(serialize(cfg)) equals cfg."""
    doc = {
        "camera": {
            "fx": float(cfg.camera.fx),
            "fy": float(cfg.camera.fy),
            "cx": float(cfg.camera.cx),
            "cy": float(cfg.camera.cy),
            "width": int(cfg.camera.width),
            "height": int(cfg.camera.height),
        },
        "scale": {
            "k": "auto" if cfg.scale.k is None else float(cfg.scale.k),
            "g0": float(cfg.scale.g0),
        },
        "sim": {
            "domain_size": float(cfg.sim.domain_size),
            "grid_resolution": int(cfg.sim.grid_resolution),
            "dt": float(cfg.sim.dt),
            "substeps_per_frame": int(cfg.sim.substeps_per_frame),
            "frame_count": int(cfg.sim.frame_count),
        },
        "collider": {
            "kind": cfg.collider.kind,
            "height": float(cfg.collider.height),
            "friction": float(cfg.collider.friction),
            "mode": cfg.collider.mode,
            "resolution": int(cfg.collider.resolution),
        },
        "light": {
            "kind": cfg.light.kind,
            "intensity": float(cfg.light.intensity),
            "ambient": float(cfg.light.ambient),
        },
        "camera_to_sim": _pose_doc(cfg.camera_to_sim),
        "track_stride": int(cfg.track_stride),
        "objects": [_object_doc(o) for o in cfg.objects],
    }
    if cfg.sim.gravity is not None:
        doc["sim"]["gravity"] = [float(v) for v in cfg.sim.gravity]
    if cfg.collider.depth is not None:
        doc["collider"]["depth"] = cfg.collider.depth
    if cfg.light.direction is not None:
        doc["light"]["direction"] = [float(v) for v in cfg.light.direction]
    if cfg.light.position is not None:
        doc["light"]["position"] = [float(v) for v in cfg.light.position]
    if cfg.background_plate is not None:
        doc["background_plate"] = cfg.background_plate
    if cfg.reference_image is not None:
        doc["reference_image"] = cfg.reference_image
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def configs_equal(a, b):
    """Field-level equality via the canonical serialization."""
    return serialize_scene_config(a) == serialize_scene_config(b)


def config_hash(cfg):
    return hashlib.sha256(serialize_scene_config(cfg).encode("utf-8")).hexdigest()


def resolve_path(cfg, rel):
    return rel if os.path.isabs(rel) else os.path.join(cfg.base_dir, rel)


def validate_scene(cfg):
    """Collect every invariant/asset violation; [] means the scene is runnable."""
    out = []
    out += cfg.camera.violations()
    out += cfg.scale.violations()
    out += cfg.sim.violations()
    out += cfg.light.violations()
    out += cfg.camera_to_sim.violations("camera_to_sim")

    if not cfg.objects:
        out.append("scene: needs at least one object")
    ids = [o.object_id for o in cfg.objects]
    if len(set(ids)) != len(ids):
        out.append("scene: object ids must be unique")

    from . import assets  # deferred: assets imports PIL

    for obj in cfg.objects:
        name = f"object {obj.object_id!r}"
        out += obj.material.violations(name)
        mesh_path = resolve_path(cfg, obj.mesh)
        if not os.path.isfile(mesh_path):
            out.append(f"{name}: mesh file not found: {mesh_path}")
        else:
            try:
                assets.load_mesh(mesh_path)
            except Exception as exc:
                out.append(f"{name}: mesh failed to load: {exc}")
        if obj.initial_pose is not None:
            out += obj.initial_pose.violations(f"{name} initial_pose")
        reg = obj.registration
        if reg is not None:
            for label, rel in (
                ("correspondences", reg.correspondences),
                ("mask", reg.mask),
                ("depth", reg.depth),
            ):
                if rel is not None and not os.path.isfile(resolve_path(cfg, rel)):
                    out.append(f"{name}: {label} file not found: {resolve_path(cfg, rel)}")
        if obj.initial_pose is None and (reg is None or reg.correspondences is None):
            out.append(f"{name}: needs initial_pose or registration correspondences")
        if obj.real_size is not None and not obj.real_size > 0:
            out.append(f"{name}: real_size must be > 0")

    if cfg.scale.k is None and not any(o.real_size is not None for o in cfg.objects):
        out.append("scale: k is auto but no object declares real_size")

    col = cfg.collider
    if col.kind == "heightfield":
        if col.depth is None:
            out.append("collider: heightfield collider needs a depth path")
        else:
            path = resolve_path(cfg, col.depth)
            if not os.path.isfile(path):
                out.append(f"collider: depth file not found: {path}")
            else:
                try:
                    assets.read_depth_raster(path)
                except Exception as exc:
                    out.append(f"collider: depth failed to load: {exc}")
    if col.resolution < 2:
        out.append("collider: resolution must be >= 2")

    for label, rel in (
        ("background_plate", cfg.background_plate),
        ("reference_image", cfg.reference_image),
    ):
        if rel is None:
            continue
        path = resolve_path(cfg, rel)
        if not os.path.isfile(path):
            out.append(f"{label}: file not found: {path}")
        else:
            try:
                img = assets.load_image(path)
            except Exception as exc:
                out.append(f"{label}: failed to load: {exc}")
            else:
                if img.shape[0] != cfg.camera.height or img.shape[1] != cfg.camera.width:
                    out.append(
                        f"{label}: dimensions {img.shape[1]}x{img.shape[0]} do not "
                        f"match camera {cfg.camera.width}x{cfg.camera.height}"
                    )

    # CFL guard on the configured initial speeds
    dx = cfg.sim.dx
    k = cfg.scale.k if cfg.scale.k is not None else 1.0
    vmax = max(
        (float(np.linalg.norm(o.initial_velocity)) * k for o in cfg.objects),
        default=0.0,
    )
    if vmax > 0 and vmax * cfg.sim.dt >= dx:
        out.append(
            f"sim: CFL violation: max initial speed {vmax:g} * dt {cfg.sim.dt:g} "
            f">= grid spacing {dx:g}"
        )
    if cfg.track_stride < 1:
        out.append("track_stride must be >= 1")
    return out
