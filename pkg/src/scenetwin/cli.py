"""Command-line front end: validate / register / sample / simulate / track /
render / pipeline.

Stages are resumable: each one reads the previous stage's files from the
output directory and recomputes missing prerequisites automatically, so
`pipeline` and the individual stages produce byte-identical artifacts.
Exit codes: 0 ok, 2 config error, 3 numeric divergence, 4 IO error.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import assets
from .config import (
    config_hash,
    load_scene_config,
    resolve_path,
    validate_scene,
)
from .deform import bind_mesh, deform_mesh, sample_tracks, save_tracks
from .errors import ConfigError, DivergenceError, RenderError, SceneTwinError
from .heightfields import build_shadow_catcher, collider_surface_mesh
from .manifest import RunManifest
from .mpm import build_collider, simulate
from .particles import ParticleCloud, read_particles, write_particles
from .registration import load_correspondences, register_object
from .render import (
    ToneCurve,
    apply_tone_curve,
    build_shadow_map,
    composite_frame,
    fit_tone_curve,
    render_shadow_factor,
    shade_objects,
)
from .sampling import mesh_to_particles
from .scene import PoseEstimate

_LUMA = np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------------------
# output bookkeeping


class OutputWriter:
    """Writes stage artifacts under one directory and tracks what it created.

    On stage failure every file created by that stage is removed so a
    rerun starts clean.
    """

    def __init__(self, out_dir, manifest):
        self.out_dir = out_dir
        self.manifest = manifest
        self.created = []
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise IOError(f"cannot create output directory {out_dir}: {exc}") from None
        if not os.access(out_dir, os.W_OK):
            raise IOError(f"output directory is not writable: {out_dir}")

    def path(self, rel):
        full = os.path.join(self.out_dir, rel)
        os.makedirs(os.path.dirname(full) or ".", exist_ok=True)
        return full

    def emit(self, rel, write_fn):
        full = self.path(rel)
        try:
            write_fn(full)
        except OSError as exc:
            raise IOError(f"failed writing {full}: {exc}") from None
        self.created.append(full)
        self.manifest.record(rel)
        return full

    def discard_created(self):
        for path in self.created:
            try:
                if os.path.exists(path):
                    os.unlink(path)
            except OSError:
                pass
        self.created = []


def write_outputs(entries, out_dir, manifest=None):
    """Write (relpath, write_fn) entries into out_dir; returns the inventory."""
    manifest = manifest if manifest is not None else RunManifest()
    writer = OutputWriter(out_dir, manifest)
    try:
        for rel, fn in entries:
            writer.emit(rel, fn)
    except Exception:
        writer.discard_created()
        raise
    return list(manifest.outputs)


# ---------------------------------------------------------------------------
# pose files


def save_pose_file(path, pose, frame, report=None):
    lines = [
        f"frame: {frame}",
        "rotation: " + " ".join(repr(float(v)) for v in pose.rotation.ravel()),
        "translation: " + " ".join(repr(float(v)) for v in pose.translation),
        f"scale: {pose.scale!r}",
    ]
    for key in sorted(report or {}):
        lines.append(f"{key}: {report[key]!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pose_file(path):
    fields = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if ":" not in line:
                continue
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
    try:
        frame = fields["frame"]
        rot = np.array([float(v) for v in fields["rotation"].split()]).reshape(3, 3)
        t = np.array([float(v) for v in fields["translation"].split()])
        s = float(fields["scale"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed pose file ({exc})") from None
    return PoseEstimate(rot, t, s), frame


# ---------------------------------------------------------------------------
# stages


def _load_object_mesh(cfg, obj):
    mesh = assets.load_mesh(resolve_path(cfg, obj.mesh))
    if mesh.colors is None:
        flat = obj.color if obj.color is not None else np.array([0.7, 0.7, 0.7])
        mesh = type(mesh)(
            mesh.vertices, mesh.triangles, np.tile(flat, (len(mesh.vertices), 1))
        )
    return mesh


def _pose_rel(obj):
    return os.path.join("poses", f"{obj.object_id}.txt")


def stage_register(cfg, writer):
    """Resolve a pose per object: config passthrough or coarse-to-fine fit."""
    poses = {}
    for obj in cfg.objects:
        rel = _pose_rel(obj)
        full = os.path.join(writer.out_dir, rel)
        if os.path.exists(full):
            poses[obj.object_id] = load_pose_file(full)
            writer.manifest.record(rel)
            continue
        reg = obj.registration
        if reg is not None and reg.correspondences is not None:
            mesh = _load_object_mesh(cfg, obj)
            corr = load_correspondences(resolve_path(cfg, reg.correspondences))
            depth_obs = (
                assets.read_depth_raster(resolve_path(cfg, reg.depth))
                if reg.depth else None
            )
            mask_obs = (
                assets.load_mask(resolve_path(cfg, reg.mask)) if reg.mask else None
            )
            pose, report = register_object(mesh, cfg.camera, corr, depth_obs, mask_obs)
            frame = "camera"
        elif obj.initial_pose is not None:
            pose, report, frame = obj.initial_pose, {}, "sim"
        else:
            raise ConfigError(
                f"object {obj.object_id!r} has neither correspondences nor initial_pose"
            )
        writer.emit(rel, lambda p, pose=pose, frame=frame, report=report:
                    save_pose_file(p, pose, frame, report))
        poses[obj.object_id] = (pose, frame)
    return poses


def sim_pose(cfg, pose, frame):
    """Pose mapping object space directly into simulator coordinates."""
    if frame == "sim":
        return pose
    return cfg.camera_to_sim.compose(pose)


def _resolve_scale_k(cfg, posed_meshes):
    if cfg.scale.k is not None:
        return float(cfg.scale.k)
    for obj in cfg.objects:
        if obj.real_size is not None:
            lo, hi = posed_meshes[obj.object_id].bounds()
            extent = float(np.max(hi - lo))
            return extent / float(obj.real_size)
    raise ConfigError("scale.k is auto but no object declares real_size")


def stage_sample(cfg, writer):
    """Turn registered meshes into the initial particle cloud."""
    poses = stage_register(cfg, writer)
    init_rel = "particles_init.ply"
    scale_rel = "scale.txt"
    init_full = os.path.join(writer.out_dir, init_rel)
    scale_full = os.path.join(writer.out_dir, scale_rel)
    if os.path.exists(init_full) and os.path.exists(scale_full):
        writer.manifest.record(init_rel)
        writer.manifest.record(scale_rel)
        cloud = read_particles(init_full)
        apply_config_particle_properties(cloud, cfg)
        k = _read_scale_file(scale_full)
        writer.manifest.scale_k = k
        return cloud, k

    posed = {}
    for obj in cfg.objects:
        pose, frame = poses[obj.object_id]
        posed[obj.object_id] = _load_object_mesh(cfg, obj).transformed(
            sim_pose(cfg, pose, frame)
        )
    k = _resolve_scale_k(cfg, posed)
    clouds = []
    for obj in cfg.objects:
        pose, frame = poses[obj.object_id]
        mesh = _load_object_mesh(cfg, obj)
        clouds.append(
            mesh_to_particles(
                mesh, sim_pose(cfg, pose, frame), obj.material, cfg.sim,
                object_name=obj.object_id,
                initial_velocity=obj.initial_velocity,
                velocity_scale=k,
            )
        )
    cloud = ParticleCloud.concatenate(clouds)
    bad = cloud.violations(cfg.sim, initial=True)
    if bad:
        raise ConfigError("; ".join(bad))
    writer.emit(init_rel, lambda p: write_particles(p, cloud))
    writer.emit(scale_rel, lambda p: _write_scale_file(p, k))
    writer.manifest.scale_k = k
    return cloud, k


def _write_scale_file(path, k):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"k: {k!r}\n")


def _read_scale_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("k:"):
                return float(line.split(":", 1)[1])
    raise ConfigError(f"{path}: missing k entry")


def apply_config_particle_properties(cloud, cfg):
    """Re-derive masses/volumes/material indices from the config.

    Snapshot PLYs carry positions/velocities/ids only; everything else is
    a pure function of the config (volume = (dx/2)^3, mass = rho * V).
    """
    cell = cfg.sim.dx / 2.0
    by_name = {o.object_id: o for o in cfg.objects}
    names = cloud.object_names or [o.object_id for o in cfg.objects]
    cloud.object_names = list(names)
    cloud.volumes[:] = cell**3
    for idx, name in enumerate(names):
        if name not in by_name:
            raise ConfigError(f"particles reference unknown object {name!r}")
        sel = cloud.object_ids == idx
        cloud.masses[sel] = by_name[name].material.density * cell**3
    cloud.material = cloud.object_ids.copy()
    return cloud


def _frame_rel(i):
    return f"particles_{i:04d}.ply"


def stage_simulate(cfg, writer):
    """Run the MPM simulation, one snapshot PLY per frame."""
    frame_rels = [_frame_rel(i) for i in range(cfg.sim.frame_count)]
    if all(os.path.exists(os.path.join(writer.out_dir, r)) for r in frame_rels):
        for rel in frame_rels:
            writer.manifest.record(rel)
        return frame_rels
    cloud, k = stage_sample(cfg, writer)
    try:
        for frame, snapshot in simulate(cfg, cloud, scale_k=k):
            writer.emit(frame_rels[frame], lambda p, s=snapshot: write_particles(p, s))
            writer.manifest.add_frame(frame, snapshot)
    except DivergenceError as exc:
        raise DivergenceError(
            f"{exc} (last good frame: {exc.last_good_frame})",
            last_good_frame=exc.last_good_frame,
        ) from None
    return frame_rels


def stage_track(cfg, writer):
    """Export dense 3D tracks from the frame snapshots."""
    rel = "tracks.txt"
    full = os.path.join(writer.out_dir, rel)
    if os.path.exists(full):
        writer.manifest.record(rel)
        return rel
    frame_rels = stage_simulate(cfg, writer)
    snaps = [read_particles(os.path.join(writer.out_dir, r)) for r in frame_rels]
    tracks = sample_tracks(snaps, stride=cfg.track_stride)
    writer.emit(rel, lambda p: save_tracks(p, tracks))
    return rel


def _build_catcher(cfg):
    """Camera-space shadow catcher surface for compositing."""
    if cfg.collider.kind == "heightfield" and cfg.collider.depth is not None:
        depth = assets.read_depth_raster(resolve_path(cfg, cfg.collider.depth))
        return build_shadow_catcher(depth, cfg.camera, cfg.collider.resolution)
    collider = build_collider(cfg)
    mesh = collider_surface_mesh(
        collider, (0.0, cfg.sim.domain_size), pad=cfg.sim.domain_size
    )
    return mesh.transformed(cfg.camera_to_sim.inverse())


def _fit_scene_tone_curve(cfg, cam_meshes_frame0):
    """Tone curve from the reference image where rendered objects overlap
    their observed masks; identity when inputs are missing or degenerate."""
    if cfg.reference_image is None:
        return ToneCurve.identity()
    masks = []
    for obj in cfg.objects:
        if obj.registration is not None and obj.registration.mask is not None:
            masks.append(assets.load_mask(resolve_path(cfg, obj.registration.mask)).values)
    if not masks:
        return ToneCurve.identity()
    observed_mask = np.logical_or.reduce(masks)
    reference = assets.load_image(resolve_path(cfg, cfg.reference_image))
    layer = shade_objects(cam_meshes_frame0, cfg.light, cfg.camera)
    overlap = layer.alpha & observed_mask
    if overlap.sum() < 16:
        return ToneCurve.identity()
    rendered = layer.color[overlap] @ _LUMA
    observed = reference[overlap] @ _LUMA
    try:
        return fit_tone_curve(rendered, observed)
    except RenderError:
        return ToneCurve.identity()


def stage_render(cfg, writer, dump_shadow=False, dump_meshes=False):
    """Shade, shadow and composite every frame over the background plate."""
    frame_rels = [f"frame_{i:04d}.png" for i in range(cfg.sim.frame_count)]
    if all(os.path.exists(os.path.join(writer.out_dir, r)) for r in frame_rels):
        for rel in frame_rels:
            writer.manifest.record(rel)
        return frame_rels
    particle_rels = stage_simulate(cfg, writer)
    poses = stage_register(cfg, writer)
    if cfg.background_plate is None:
        raise ConfigError("render stage needs a background_plate in the config")
    plate = assets.load_image(resolve_path(cfg, cfg.background_plate))
    if plate.shape[:2] != (cfg.camera.height, cfg.camera.width):
        raise ConfigError("background plate dimensions do not match the camera")

    frame0 = read_particles(os.path.join(writer.out_dir, particle_rels[0]))
    bindings = []
    sim_meshes = []
    for obj in cfg.objects:
        pose, frame = poses[obj.object_id]
        mesh = _load_object_mesh(cfg, obj).transformed(sim_pose(cfg, pose, frame))
        sim_meshes.append(mesh)
        bindings.append(
            bind_mesh(mesh, frame0, k=8, object_ref=obj.object_id, dx=cfg.sim.dx)
        )
    to_camera = cfg.camera_to_sim.inverse()
    catcher = _build_catcher(cfg)
    tone = _fit_scene_tone_curve(
        cfg, [m.transformed(to_camera) for m in sim_meshes]
    )

    for i, prel in enumerate(particle_rels):
        snap = read_particles(os.path.join(writer.out_dir, prel))
        cam_meshes = []
        for binding, obj in zip(bindings, cfg.objects):
            deformed = deform_mesh(binding, snap)
            if dump_meshes:
                writer.emit(
                    f"mesh_{obj.object_id}_{i:04d}.obj",
                    lambda p, m=deformed: assets.save_mesh(p, m),
                )
            cam_meshes.append(deformed.transformed(to_camera))
        smap = build_shadow_map(cam_meshes, cfg.light)
        layer = shade_objects(cam_meshes, cfg.light, cfg.camera, shadow_map=smap)
        layer.color = apply_tone_curve(tone, layer.color)
        factor = render_shadow_factor(
            catcher, cam_meshes, cfg.light, cfg.camera, shadow_map=smap
        )
        frame_img = composite_frame(plate, layer, factor)
        writer.emit(frame_rels[i], lambda p, img=frame_img: assets.save_image_u8(p, img))
        if dump_shadow:
            writer.emit(
                f"shadow_{i:04d}.png",
                lambda p, f=factor: assets.save_gray16(p, f),
            )
    return frame_rels


# ---------------------------------------------------------------------------
# entry point


def _timed(manifest, name, fn, *args, **kwargs):
    t0 = time.perf_counter()
    result = fn(*args, **kwargs)
    manifest.stages[name] = manifest.stages.get(name, 0.0) + time.perf_counter() - t0
    return result


def _write_diagnostics(writer):
    rows = ["frame\tmass\tmomentum_x\tmomentum_y\tmomentum_z\tmax_speed\tkinetic_energy"]
    for fr in writer.manifest.frames:
        m = fr["momentum"]
        rows.append(
            f"{fr['frame']}\t{fr['mass']!r}\t{m[0]!r}\t{m[1]!r}\t{m[2]!r}"
            f"\t{fr['max_speed']!r}\t{fr['kinetic_energy']!r}"
        )
    writer.emit("diagnostics.txt", lambda p: _write_text(p, "\n".join(rows) + "\n"))


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scenetwin",
        description="Register, simulate and render a single-image scene twin.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("validate", "register", "sample", "simulate", "track", "render", "pipeline"):
        p = sub.add_parser(name)
        p.add_argument("config", help="scene config (YAML)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--frames", type=int, default=None, help="override frame count")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (results never depend on this)")
        p.add_argument("--seed", type=int, default=None,
                       help="reserved; the pipeline is deterministic without randomness")
        p.add_argument("--dump-diagnostics", action="store_true")
        p.add_argument("--dump-shadow", action="store_true",
                       help="write 16-bit shadow factor PNGs (render stage)")
        p.add_argument("--dump-meshes", action="store_true",
                       help="write per-frame deformed meshes (render stage)")
    return parser


def run_command(args):
    cfg = load_scene_config(args.config)
    if args.frames is not None:
        if args.frames < 1:
            raise ConfigError("--frames must be >= 1")
        cfg.sim.frame_count = args.frames

    if args.command == "validate":
        problems = validate_scene(cfg)
        if problems:
            for p in problems:
                print(p, file=sys.stderr)
            return 2
        print("OK")
        return 0

    problems = validate_scene(cfg)
    if problems:
        raise ConfigError("; ".join(problems))

    manifest = RunManifest(config_hash=config_hash(cfg), scale_k=cfg.scale.k)
    writer = OutputWriter(args.out, manifest)
    try:
        if args.command == "register":
            _timed(manifest, "register", stage_register, cfg, writer)
        elif args.command == "sample":
            _timed(manifest, "sample", stage_sample, cfg, writer)
        elif args.command == "simulate":
            _timed(manifest, "simulate", stage_simulate, cfg, writer)
        elif args.command == "track":
            _timed(manifest, "track", stage_track, cfg, writer)
        elif args.command == "render":
            _timed(manifest, "render", stage_render, cfg, writer,
                   dump_shadow=args.dump_shadow, dump_meshes=args.dump_meshes)
        elif args.command == "pipeline":
            _timed(manifest, "register", stage_register, cfg, writer)
            _timed(manifest, "sample", stage_sample, cfg, writer)
            _timed(manifest, "simulate", stage_simulate, cfg, writer)
            _timed(manifest, "track", stage_track, cfg, writer)
            _timed(manifest, "render", stage_render, cfg, writer,
                   dump_shadow=args.dump_shadow, dump_meshes=args.dump_meshes)
    except Exception:
        writer.discard_created()
        raise
    if args.dump_diagnostics and manifest.frames:
        _write_diagnostics(writer)
    manifest.record("manifest.txt")
    manifest.write_atomic(os.path.join(args.out, "manifest.txt"))
    return 0


def _fail(category, exc):
    message = str(exc).replace("\n", "; ")
    print(f"error: {category}: {message}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return run_command(args)
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    except DivergenceError as exc:
        _fail("divergence", exc)
        return 3
    except (IOError, OSError) as exc:
        _fail("io", exc)
        return 4
    except SceneTwinError as exc:
        _fail("config", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
