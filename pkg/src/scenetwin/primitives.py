"""Procedural meshes: box, icosphere, regular-grid heightfield surfaces."""

import numpy as np

from .scene import TriangleMesh


def box_mesh(size=1.0, center=(0.0, 0.0, 0.0), color=None):
    """Axis-aligned box; size is a scalar or per-axis triple."""
    s = np.broadcast_to(np.asarray(size, dtype=np.float64), (3,)) / 2.0
    c = np.asarray(center, dtype=np.float64)
    corners = np.array(
        [
            [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
            [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
        ],
        dtype=np.float64,
    )
    verts = corners * s + c
    # two triangles per face, outward winding
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],   # z-
            [4, 5, 6], [4, 6, 7],   # z+
            [0, 1, 5], [0, 5, 4],   # y-
            [3, 6, 2], [3, 7, 6],   # y+
            [0, 4, 7], [0, 7, 3],   # x-
            [1, 2, 6], [1, 6, 5],   # x+
        ],
        dtype=np.int32,
    )
    colors = np.tile(np.asarray(color, dtype=np.float64), (8, 1)) if color is not None else None
    return TriangleMesh(verts, faces, colors)


def icosphere_mesh(radius=1.0, center=(0.0, 0.0, 0.0), subdivisions=2, color=None):
    """Geodesic sphere from a subdivided icosahedron."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = np.add(verts[a], verts[b]) / 2.0
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    colors = np.tile(np.asarray(color, dtype=np.float64), (len(v), 1)) if color is not None else None
    return TriangleMesh(v, np.asarray(faces, dtype=np.int32), colors)


def heightfield_mesh(heights, origin, spacing, up_axis="y"):
    """Triangulate a regular heightfield grid.

    heights has shape (nv, nu); grid point (i, j) lies at
    origin + (j*spacing_u, i*spacing_v) in the two ground axes with the
    height on up_axis. up_axis "y" parameterizes over (x, z); "z" over
    (x, y), which matches camera-space catcher surfaces (height = depth).
    spacing may be a scalar or a (spacing_u, spacing_v) pair.
    """
    heights = np.asarray(heights, dtype=np.float64)
    nv, nu = heights.shape
    u0, v0 = origin
    su, sv = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (2,))
    uu, vv = np.meshgrid(u0 + su * np.arange(nu), v0 + sv * np.arange(nv))
    if up_axis == "y":
        verts = np.stack([uu, heights, vv], axis=-1).reshape(-1, 3)
    elif up_axis == "z":
        verts = np.stack([uu, vv, heights], axis=-1).reshape(-1, 3)
    else:
        raise ValueError(f"unsupported up_axis {up_axis!r}")
    idx = np.arange(nv * nu).reshape(nv, nu)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    faces = np.concatenate(
        [np.stack([a, b, d], axis=1), np.stack([a, d, c], axis=1)], axis=0
    ).astype(np.int32)
    return TriangleMesh(verts, faces)


def plane_mesh(height, extent, up_axis="y", pad=0.0):
    """Flat square surface at a constant height spanning [lo, hi] x [lo, hi]."""
    lo, hi = extent
    lo -= pad
    hi += pad
    heights = np.full((2, 2), float(height))
    return heightfield_mesh(heights, (lo, lo), hi - lo, up_axis=up_axis)
