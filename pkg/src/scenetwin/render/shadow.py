"""Two-pass shadow mapping: light-space depth pass + receiver depth test."""

import warnings
from dataclasses import dataclass

import numpy as np

from ..raster import render_gbuffer_ortho, render_gbuffer_pinhole

DEFAULT_MAP_RESOLUTION = 2048
_BIAS_TEXELS = 2.0   # depth bias in light-space texel footprints


@dataclass
class ShadowMap:
    kind: str                 # directional | point
    depth: np.ndarray         # (res,res), +inf where no occluder
    resolution: int
    basis: np.ndarray         # rows: (e1, e2, axis) light-space frame
    origin: np.ndarray        # directional: plane offsets; point: light position
    su: float = 1.0           # world units per texel (directional)
    sv: float = 1.0
    focal: float = 1.0        # pixels (point)
    center: float = 0.0       # principal point in pixels (point)

    def light_coords(self, points):
        """World points (N,3) -> (u_px, v_px, depth, texel_world)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.kind == "directional":
            q = (p - self.origin) @ self.basis.T
            u = q[:, 0] / self.su
            v = q[:, 1] / self.sv
            depth = q[:, 2]
            texel = np.full(len(p), max(self.su, self.sv))
        else:
            q = (p - self.origin) @ self.basis.T
            z = q[:, 2]
            zsafe = np.where(z > 1e-9, z, np.inf)
            u = self.focal * q[:, 0] / zsafe + self.center
            v = self.focal * q[:, 1] / zsafe + self.center
            depth = z
            texel = np.maximum(z, 0.0) / self.focal
        return u, v, depth, texel

    def visibility(self, points):
        """1.0 where the point sees the light, 0.0 where an occluder wins.

        Points mapping outside the depth map are lit (nothing projects
        there). The depth test uses a 2-texel light-space bias.
        """
        u, v, depth, texel = self.light_coords(points)
        res = self.resolution
        iu = np.rint(u).astype(int)
        iv = np.rint(v).astype(int)
        inside = (iu >= 0) & (iu < res) & (iv >= 0) & (iv < res) & np.isfinite(depth)
        vis = np.ones(len(iu))
        if inside.any():
            d_map = self.depth[iv[inside], iu[inside]]
            bias = _BIAS_TEXELS * texel[inside]
            vis_in = np.where(d_map < depth[inside] - bias, 0.0, 1.0)
            vis[inside] = vis_in
        return vis


def _orthonormal_basis(axis):
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(a[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return np.stack([e1, e2, a])


def _gather(meshes):
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return np.concatenate(verts), np.concatenate(tris)


def build_shadow_map(occluders, light, resolution=DEFAULT_MAP_RESOLUTION):
    """Pass 1: render the occluders' depth as seen from the light."""
    occluders = [m for m in occluders if len(m.triangles)]
    if not occluders:
        depth = np.full((resolution, resolution), np.inf)
        return ShadowMap(
            kind=light.kind, depth=depth, resolution=resolution,
            basis=np.eye(3), origin=np.zeros(3),
        )
    verts, tris = _gather(occluders)
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo))

    if light.kind == "directional":
        basis = _orthonormal_basis(light.direction)
        q = (verts - center) @ basis.T
        pad = max(radius, 1e-6) * 0.01 + 1e-9
        u0, u1 = q[:, 0].min() - pad, q[:, 0].max() + pad
        v0, v1 = q[:, 1].min() - pad, q[:, 1].max() + pad
        su = (u1 - u0) / (resolution - 1)
        sv = (v1 - v0) / (resolution - 1)
        origin = center + u0 * basis[0] + v0 * basis[1]
        qq = (verts - origin) @ basis.T
        gbuf = render_gbuffer_ortho(
            qq[:, 0] / su, qq[:, 1] / sv, qq[:, 2], tris, resolution, resolution
        )
        return ShadowMap(
            kind="directional", depth=gbuf.depth, resolution=resolution,
            basis=basis, origin=origin, su=su, sv=sv,
        )

    pos = light.position
    if np.all(np.abs(pos - center) <= (hi - lo) / 2):
        warnings.warn("point light lies inside the occluder bounding box")
    axis = center - pos
    dist = np.linalg.norm(axis)
    if dist < 1e-9:
        axis = np.array([0.0, 0.0, 1.0])
        dist = 1.0
    basis = _orthonormal_basis(axis)
    q = (verts - pos) @ basis.T
    z = np.maximum(q[:, 2], 1e-9)
    tan_max = float(np.max(np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) / z)) + 1e-6
    cpx = (resolution - 1) / 2.0
    focal = (cpx - 1.0) / tan_max
    gbuf = render_gbuffer_pinhole(
        q, tris, focal, focal, cpx, cpx, resolution, resolution
    )
    return ShadowMap(
        kind="point", depth=gbuf.depth, resolution=resolution,
        basis=basis, origin=pos, focal=focal, center=cpx,
    )


def render_shadow_factor(catcher, objects, light, cam,
                         map_resolution=DEFAULT_MAP_RESOLUTION, shadow_map=None):
    """Per-pixel shadow factor over the catcher surface.

    factor = ambient + (1 - ambient) * visibility on catcher pixels, 1.0
    elsewhere; values lie in [0,1] and raising ambient never darkens any
    pixel. Pass a prebuilt shadow_map to share the light pass with
    shade_objects.
    """
    h, w = cam.height, cam.width
    factor = np.ones((h, w))
    objects = [m for m in objects if len(m.triangles)]
    if not objects or light.ambient >= 1.0:
        return factor   # ambient 1 forces factor 1 regardless of occluders
    smap = shadow_map if shadow_map is not None else build_shadow_map(
        objects, light, map_resolution
    )
    gbuf = render_gbuffer_pinhole(
        catcher.vertices, catcher.triangles, cam.fx, cam.fy, cam.cx, cam.cy, w, h
    )
    mask = gbuf.mask
    if not mask.any():
        return factor
    vv, uu = np.nonzero(mask)
    pts = cam.unproject(
        np.stack([uu, vv], axis=1).astype(np.float64), gbuf.depth[vv, uu]
    )
    vis = smap.visibility(pts)
    factor[vv, uu] = light.ambient + (1.0 - light.ambient) * vis
    return np.clip(factor, 0.0, 1.0)
