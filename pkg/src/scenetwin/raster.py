"""Software z-buffer rasterizer.

One numba kernel serves every pass in the package: camera mask/depth
rendering for registration, shaded object rendering, and light-space
shadow maps (perspective and orthographic). The kernel walks triangles in
index order and only replaces a pixel on a strictly smaller depth, so
depth ties resolve to the lower triangle index and output is
deterministic.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .scene import DepthImage, MaskImage


@njit(cache=True)
def _raster_core(u, v, z, tris, tri_ok, height, width, perspective):
    depth = np.full((height, width), np.inf)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    b0_img = np.zeros((height, width))
    b1_img = np.zeros((height, width))
    for m in range(tris.shape[0]):
        if not tri_ok[m]:
            continue
        i0, i1, i2 = tris[m, 0], tris[m, 1], tris[m, 2]
        u0, u1, u2 = u[i0], u[i1], u[i2]
        v0, v1, v2 = v[i0], v[i1], v[i2]
        area2 = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area2) < 1e-12:
            continue
        umin = min(u0, min(u1, u2))
        umax = max(u0, max(u1, u2))
        vmin = min(v0, min(v1, v2))
        vmax = max(v0, max(v1, v2))
        x0 = max(0, int(np.ceil(umin)))
        x1 = min(width - 1, int(np.floor(umax)))
        y0 = max(0, int(np.ceil(vmin)))
        y1 = min(height - 1, int(np.floor(vmax)))
        if x0 > x1 or y0 > y1:
            continue
        z0, z1, z2 = z[i0], z[i1], z[i2]
        inv_area = 1.0 / area2
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                e0 = (u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)
                e1 = (u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)
                e2 = (u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)
                if area2 > 0.0:
                    if e0 < 0.0 or e1 < 0.0 or e2 < 0.0:
                        continue
                else:
                    if e0 > 0.0 or e1 > 0.0 or e2 > 0.0:
                        continue
                b0 = e0 * inv_area
                b1 = e1 * inv_area
                b2 = e2 * inv_area
                if perspective:
                    # perspective-correct: interpolate 1/z, then rescale
                    iz = b0 / z0 + b1 / z1 + b2 / z2
                    d = 1.0 / iz
                    pb0 = (b0 / z0) * d
                    pb1 = (b1 / z1) * d
                else:
                    d = b0 * z0 + b1 * z1 + b2 * z2
                    pb0 = b0
                    pb1 = b1
                if d < depth[py, px]:
                    depth[py, px] = d
                    tri_id[py, px] = m
                    b0_img[py, px] = pb0
                    b1_img[py, px] = pb1
    return depth, tri_id, b0_img, b1_img


@dataclass
class GBuffer:
    depth: np.ndarray    # (H,W) float64, +inf where empty
    tri: np.ndarray      # (H,W) int32, -1 where empty
    b0: np.ndarray       # barycentric of triangle vertex 0
    b1: np.ndarray
    tris: np.ndarray     # the triangle index array used for the pass

    @property
    def mask(self):
        return self.tri >= 0

    def interpolate(self, attributes):
        """Per-pixel interpolation of a per-vertex attribute array (V,) or (V,C)."""
        attr = np.asarray(attributes, dtype=np.float64)
        flat = attr.reshape(len(attr), -1)
        h, w = self.tri.shape
        out = np.zeros((h, w, flat.shape[1]))
        m = self.mask
        t = self.tris[self.tri[m]]
        b0 = self.b0[m][:, None]
        b1 = self.b1[m][:, None]
        b2 = 1.0 - self.b0[m][:, None] - self.b1[m][:, None]
        out[m] = b0 * flat[t[:, 0]] + b1 * flat[t[:, 1]] + b2 * flat[t[:, 2]]
        if attr.ndim == 1:
            return out[:, :, 0]
        return out


_NEAR_EPS = 1e-9


def render_gbuffer_pinhole(verts_cam, tris, fx, fy, cx, cy, width, height):
    """Rasterize camera-space geometry through a pinhole at the origin.

    Triangles with any vertex at or behind the camera plane are dropped
    (objects straddling the near plane are out of scope for this renderer).
    """
    verts = np.asarray(verts_cam, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.int32).reshape(-1, 3)
    z = verts[:, 2]
    in_front = z > _NEAR_EPS
    zsafe = np.where(in_front, z, 1.0)
    u = fx * verts[:, 0] / zsafe + cx
    v = fy * verts[:, 1] / zsafe + cy
    tri_ok = in_front[tris].all(axis=1)
    depth, tri_id, b0, b1 = _raster_core(
        u, v, z, tris, tri_ok, int(height), int(width), True
    )
    return GBuffer(depth, tri_id, b0, b1, tris)


def render_gbuffer_ortho(u, v, depth_values, tris, width, height):
    """Rasterize pre-projected geometry with linear depth interpolation."""
    tris = np.asarray(tris, dtype=np.int32).reshape(-1, 3)
    tri_ok = np.ones(len(tris), dtype=bool)
    depth, tri_id, b0, b1 = _raster_core(
        np.asarray(u, dtype=np.float64),
        np.asarray(v, dtype=np.float64),
        np.asarray(depth_values, dtype=np.float64),
        tris,
        tri_ok,
        int(height),
        int(width),
        False,
    )
    return GBuffer(depth, tri_id, b0, b1, tris)


def rasterize_mask_depth(mesh, pose, cam):
    """Render the coverage mask and nearest-surface z-depth of a posed mesh.

    Both front- and back-facing triangles cover pixels; overlaps keep the
    nearest depth. A mesh entirely behind the camera yields an empty mask.
    """
    pose.validate()
    verts_cam = pose.apply(mesh.vertices)
    gbuf = render_gbuffer_pinhole(
        verts_cam, mesh.triangles, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
    )
    mask = gbuf.mask
    values = np.where(mask, gbuf.depth, np.nan)
    return MaskImage(mask), DepthImage(values)
