"""Z-buffered Lambertian shading of the deformed objects."""

from dataclasses import dataclass

import numpy as np

from ..raster import render_gbuffer_pinhole
from .shadow import build_shadow_map

_DEFAULT_COLOR = (0.7, 0.7, 0.7)


@dataclass
class ObjectLayer:
    color: np.ndarray    # (H,W,3) float in [0,1]
    alpha: np.ndarray    # (H,W) bool
    depth: np.ndarray    # (H,W) float, +inf where empty


def shade_objects(meshes, light, cam, shadow_map=None):
    """Shade camera-space meshes: color * intensity * (ambient + diffuse).

    diffuse = (1 - ambient) * max(0, n.l) * visibility with the same
    light-space shadow test as the catcher pass (self/mutual shadowing).
    Normals are smooth per-vertex, interpolated per pixel, and flipped to
    face the camera so backside coverage still shades sanely.
    """
    h, w = cam.height, cam.width
    meshes = [m for m in meshes if len(m.triangles)]
    if not meshes:
        return ObjectLayer(
            color=np.zeros((h, w, 3)),
            alpha=np.zeros((h, w), dtype=bool),
            depth=np.full((h, w), np.inf),
        )
    verts = []
    tris = []
    colors = []
    normals = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        c = m.colors if m.colors is not None else np.tile(_DEFAULT_COLOR, (len(m.vertices), 1))
        colors.append(c)
        normals.append(m.vertex_normals())
        offset += len(m.vertices)
    verts = np.concatenate(verts)
    tris = np.concatenate(tris)
    colors = np.concatenate(colors)
    normals = np.concatenate(normals)

    if shadow_map is None:
        shadow_map = build_shadow_map(meshes, light)

    gbuf = render_gbuffer_pinhole(verts, tris, cam.fx, cam.fy, cam.cx, cam.cy, w, h)
    mask = gbuf.mask
    color_img = np.zeros((h, w, 3))
    if mask.any():
        vv, uu = np.nonzero(mask)
        pts = cam.unproject(
            np.stack([uu, vv], axis=1).astype(np.float64), gbuf.depth[vv, uu]
        )
        c = gbuf.interpolate(colors)[vv, uu]
        n = gbuf.interpolate(normals)[vv, uu]
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        norm[norm < 1e-30] = 1.0
        n = n / norm
        # two-sided: flip normals pointing away from the camera
        flip = (n * pts).sum(axis=1) > 0
        n[flip] *= -1.0
        if light.kind == "directional":
            l = -light.direction[None, :]
        else:
            l = light.position[None, :] - pts
            l = l / np.maximum(np.linalg.norm(l, axis=1, keepdims=True), 1e-30)
        lambert = np.maximum(0.0, (n * l).sum(axis=1))
        vis = shadow_map.visibility(pts)
        shade = light.intensity * (
            light.ambient + (1.0 - light.ambient) * lambert * vis
        )
        color_img[vv, uu] = np.clip(c * shade[:, None], 0.0, 1.0)
    return ObjectLayer(color=color_img, alpha=mask, depth=gbuf.depth)
