"""Regular-grid heightfields from scattered depth unprojections.

Backs both the simulation ground collider (heights along sim +y over the
x/z footprint) and the render-side shadow catcher (heights along camera
+z over the image-plane x/y extent).
"""

import numpy as np
from scipy import ndimage

from .errors import RenderError
from .primitives import heightfield_mesh
from .scene import ColliderSurface


def resample_to_grid(pu, pv, values, u_range, v_range, nu, nv):
    """Nearest-node binning of scattered samples onto a regular grid.

    Empty nodes are filled from their nearest occupied node, then one
    Laplacian smoothing pass (half-weight 4-neighbor average) is applied.
    """
    u0, u1 = u_range
    v0, v1 = v_range
    su = (u1 - u0) / (nu - 1)
    sv = (v1 - v0) / (nv - 1)
    iu = np.clip(np.rint((pu - u0) / su).astype(int), 0, nu - 1)
    iv = np.clip(np.rint((pv - v0) / sv).astype(int), 0, nv - 1)
    sums = np.zeros((nv, nu))
    counts = np.zeros((nv, nu))
    np.add.at(sums, (iv, iu), values)
    np.add.at(counts, (iv, iu), 1.0)
    grid = np.zeros((nv, nu))
    filled = counts > 0
    grid[filled] = sums[filled] / counts[filled]
    if not filled.all():
        if not filled.any():
            raise RenderError("heightfield resample: no samples fell on the grid")
        # nearest-valid hole fill
        _, (ri, ci) = ndimage.distance_transform_edt(
            ~filled, return_distances=True, return_indices=True
        )
        grid = grid[ri, ci]
    padded = np.pad(grid, 1, mode="edge")
    neighbor_mean = 0.25 * (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
    )
    return 0.5 * grid + 0.5 * neighbor_mean, (su, sv)


def _unproject_valid(depth, cam):
    valid = depth.valid
    if not valid.any():
        raise RenderError("depth image has no valid pixels")
    vv, uu = np.nonzero(valid)
    z = depth.values[vv, uu]
    pts = cam.unproject(np.stack([uu, vv], axis=1).astype(np.float64), z)
    return pts, valid


def build_shadow_catcher(depth, cam, grid_res=64):
    """Triangulated camera-space surface fit to the background depth.

    Requires at least 50% valid depth pixels. The depth map is unprojected
    to 3D, resampled to a grid_res x grid_res heightfield over the
    camera-space x/y extent (height = z), hole-filled and smoothed, then
    triangulated as a regular grid mesh.
    """
    valid_fraction = depth.valid.mean()
    if valid_fraction < 0.5:
        raise RenderError(
            f"shadow catcher needs >= 50% valid depth pixels, got {valid_fraction:.0%}"
        )
    pts, _ = _unproject_valid(depth, cam)
    x0, x1 = pts[:, 0].min(), pts[:, 0].max()
    y0, y1 = pts[:, 1].min(), pts[:, 1].max()
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise RenderError("depth unprojection is degenerate (zero extent)")
    heights, (sx, sy) = resample_to_grid(
        pts[:, 0], pts[:, 1], pts[:, 2], (x0, x1), (y0, y1), grid_res, grid_res
    )
    return heightfield_mesh(heights, (x0, y0), (sx, sy), up_axis="z")


def collider_from_depth(depth, cam, camera_to_sim, domain_size, grid_res=64,
                        friction=0.0, mode="slip"):
    """Ground collider heightfield in sim coordinates from observed depth.

    The depth is unprojected, mapped through camera_to_sim, and resampled
    as heights along +y over the [0, domain_size]^2 x/z footprint (so the
    collider always covers the domain; regions without observations take
    the nearest observed height).
    """
    pts_cam, _ = _unproject_valid(depth, cam)
    pts = camera_to_sim.apply(pts_cam)
    heights, (s, _) = resample_to_grid(
        pts[:, 0], pts[:, 2], pts[:, 1],
        (0.0, domain_size), (0.0, domain_size), grid_res, grid_res,
    )
    return ColliderSurface(
        kind="heightfield", friction=friction, mode=mode,
        heights=heights, origin=(0.0, 0.0), spacing=s,
    )


def collider_surface_mesh(collider, extent, pad=0.0):
    """Triangle mesh of a collider (for rendering it as a shadow catcher)."""
    if collider.kind == "plane":
        lo, hi = extent
        heights = np.full((2, 2), collider.plane_height)
        return heightfield_mesh(
            heights, (lo - pad, lo - pad), hi - lo + 2 * pad, up_axis="y"
        )
    return heightfield_mesh(
        collider.heights, collider.origin, collider.spacing, up_axis="y"
    )
