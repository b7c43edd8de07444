"""Shared fixture builders: synthetic scenes for CLI and acceptance tests."""

import os

import numpy as np

from scenetwin import assets
from scenetwin.geometry import rodrigues
from scenetwin.primitives import box_mesh, icosphere_mesh
from scenetwin.scene import CameraIntrinsics, DepthImage, PoseEstimate

# camera->sim frame used by the fixtures: rotate pi about x (camera y-down
# to sim y-up), camera origin at sim (1, 1, 3.2) looking toward -z
CAM_TO_SIM_ROT = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
CAM_TO_SIM_T = np.array([1.0, 1.0, 3.2])


def camera_to_sim_pose():
    return PoseEstimate(CAM_TO_SIM_ROT, CAM_TO_SIM_T, 1.0)


def sim_direction_to_camera(d_sim):
    return CAM_TO_SIM_ROT.T @ np.asarray(d_sim, dtype=np.float64)


def _write_plate(path, width, height):
    yy = np.linspace(0.35, 0.75, height)[:, None]
    xx = np.linspace(0.0, 0.15, width)[None, :]
    img = np.stack([yy + xx, yy + 0.05 + 0.5 * xx, yy + 0.1 + 0.2 * xx], axis=-1)
    assets.save_image_u8(path, assets.quantize_u8(np.clip(img, 0, 1)))


def _pose_doc(translation, rotation=None):
    doc = {"translation": [float(v) for v in translation]}
    if rotation is not None:
        doc["rotation"] = [[float(v) for v in row] for row in rotation]
    return doc


def write_demo_scene(out_dir, resolution=128, frames=50, width=320, height=240,
                     substeps=100, dt=1.5e-4):
    """Three-object desk demo: soft filled ball, hard shell crate, soft pad.

    Objects carry initial velocities and drop onto a plane collider;
    contact, bounce and cast shadows are all visible within the default
    50 frames.
    """
    os.makedirs(out_dir, exist_ok=True)
    ball = icosphere_mesh(radius=0.09, subdivisions=3, color=(0.85, 0.25, 0.2))
    crate = box_mesh(size=0.16, color=(0.3, 0.45, 0.85))
    pad = icosphere_mesh(radius=0.075, subdivisions=3, color=(0.95, 0.8, 0.25))
    assets.save_mesh(os.path.join(out_dir, "ball.ply"), ball)
    assets.save_mesh(os.path.join(out_dir, "crate.obj"), crate)
    assets.save_mesh(os.path.join(out_dir, "pad.ply"), pad)
    _write_plate(os.path.join(out_dir, "plate.png"), width, height)

    d_cam = sim_direction_to_camera([0.3, -1.0, -0.25])
    d_cam /= np.linalg.norm(d_cam)
    import yaml

    doc = {
        "camera": {
            "fx": 0.9 * width, "fy": 0.9 * width,
            "cx": (width - 1) / 2.0, "cy": (height - 1) / 2.0,
            "width": width, "height": height,
        },
        "camera_to_sim": {
            "rotation": [[float(v) for v in row] for row in CAM_TO_SIM_ROT],
            "translation": [float(v) for v in CAM_TO_SIM_T],
            "scale": 1.0,
        },
        "scale": {"k": 1.0, "g0": 9.8},
        "sim": {
            "domain_size": 2.0, "grid_resolution": resolution, "dt": dt,
            "substeps_per_frame": substeps, "frame_count": frames,
        },
        "collider": {"kind": "plane", "height": 0.25, "friction": 0.3, "mode": "slip"},
        "light": {
            "kind": "directional",
            "direction": [float(v) for v in d_cam],
            "intensity": 1.0,
            "ambient": 0.35,
        },
        "background_plate": "plate.png",
        "track_stride": 4,
        "objects": [
            {
                "id": "ball", "mesh": "ball.ply",
                "material": {"density": 800.0, "elasticity": "soft",
                             "requires_internal_fill": True},
                "initial_pose": _pose_doc([0.8, 0.85, 1.0]),
                "initial_velocity": [0.5, 0.0, 0.0],
            },
            {
                "id": "crate", "mesh": "crate.obj",
                "material": {"density": 2700.0, "elasticity": "hard",
                             "requires_internal_fill": False},
                "initial_pose": _pose_doc(
                    [1.25, 0.7, 1.0], rodrigues([0.0, 0.4, 0.0])
                ),
                "initial_velocity": [-0.3, 0.0, 0.0],
            },
            {
                "id": "pad", "mesh": "pad.ply",
                "material": {"density": 400.0, "elasticity": "soft",
                             "requires_internal_fill": True},
                "initial_pose": _pose_doc([1.0, 0.45, 1.25]),
                "initial_velocity": [0.0, -0.4, 0.0],
            },
        ],
    }
    path = os.path.join(out_dir, "scene.yaml")
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    return path


def write_mini_scene(out_dir, frames=5, resolution=48, width=96, height=72,
                     heightfield_collider=False):
    """Small, fast scene for CLI/determinism tests (two tiny objects)."""
    os.makedirs(out_dir, exist_ok=True)
    ball = icosphere_mesh(radius=0.1, subdivisions=2, color=(0.8, 0.3, 0.2))
    cube = box_mesh(size=0.16, color=(0.2, 0.4, 0.8))
    assets.save_mesh(os.path.join(out_dir, "ball.ply"), ball)
    assets.save_mesh(os.path.join(out_dir, "cube.obj"), cube)
    _write_plate(os.path.join(out_dir, "plate.png"), width, height)

    collider = {"kind": "plane", "height": 0.3, "friction": 0.2, "mode": "slip"}
    if heightfield_collider:
        cam = CameraIntrinsics(0.9 * width, 0.9 * width,
                               (width - 1) / 2.0, (height - 1) / 2.0, width, height)
        depth = ramp_floor_depth(cam, plane_height=0.3)
        assets.write_depth_raster(os.path.join(out_dir, "floor.dpth"), depth)
        collider = {"kind": "heightfield", "depth": "floor.dpth",
                    "friction": 0.2, "mode": "slip", "resolution": 32}

    d_cam = sim_direction_to_camera([0.25, -1.0, -0.2])
    d_cam /= np.linalg.norm(d_cam)
    import yaml

    doc = {
        "camera": {
            "fx": 0.9 * width, "fy": 0.9 * width,
            "cx": (width - 1) / 2.0, "cy": (height - 1) / 2.0,
            "width": width, "height": height,
        },
        "camera_to_sim": {
            "rotation": [[float(v) for v in row] for row in CAM_TO_SIM_ROT],
            "translation": [float(v) for v in CAM_TO_SIM_T],
            "scale": 1.0,
        },
        "scale": {"k": 1.0, "g0": 9.8},
        "sim": {
            "domain_size": 2.0, "grid_resolution": resolution, "dt": 4e-4,
            "substeps_per_frame": 25, "frame_count": frames,
        },
        "collider": collider,
        "light": {
            "kind": "directional",
            "direction": [float(v) for v in d_cam],
            "intensity": 1.0,
            "ambient": 0.4,
        },
        "background_plate": "plate.png",
        "track_stride": 7,
        "objects": [
            {
                "id": "ball", "mesh": "ball.ply",
                "material": {"density": 500.0, "elasticity": "soft",
                             "requires_internal_fill": True},
                "initial_pose": _pose_doc([0.8, 0.75, 1.0]),
                "initial_velocity": [0.4, 0.0, 0.0],
            },
            {
                "id": "cube", "mesh": "cube.obj",
                "material": {"density": 900.0, "elasticity": "medium",
                             "requires_internal_fill": False},
                "initial_pose": _pose_doc([1.2, 0.6, 1.05]),
                "initial_velocity": [0.0, 0.0, 0.0],
            },
        ],
    }
    path = os.path.join(out_dir, "scene.yaml")
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    return path


def ramp_floor_depth(cam, plane_height=0.3):
    """Depth raster of the sim-space plane y = plane_height seen by the camera.

    Inverts the fixture camera_to_sim mapping: a camera ray hits the plane
    where (cam_to_sim . p)_y == plane_height.
    """
    uu, vv = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    dx = (uu - cam.cx) / cam.fx
    dy = (vv - cam.cy) / cam.fy
    # sim y of a camera point (x, y, z): 1.0 - y  (fixture frame)
    # ray: y = dy * z  -> 1 - dy z = plane_height  -> z = (1 - h) / dy
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (1.0 - plane_height) / dy
    z[(dy <= 1e-6) | (z > 6.0)] = np.nan
    return DepthImage(z)
