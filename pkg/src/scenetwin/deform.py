"""Mesh deformation from particle motion and dense 3D track export.

Vertices bind to their K nearest particles at frame 0 with normalized
inverse-distance weights; per-frame vertex displacement is the weighted
average particle displacement, which is exact for global translations
and keeps mesh detail finer than the particle spacing.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import SceneTwinError
from .scene import TriangleMesh


@dataclass
class VertexBinding:
    object_index: int
    cloud_size: int
    particle_indices: np.ndarray      # (V,K) global particle indices
    weights: np.ndarray               # (V,K), rows sum to 1
    ref_positions: np.ndarray         # (V,K,3) particle positions at bind time
    base_vertices: np.ndarray         # (V,3) registered mesh vertices
    triangles: np.ndarray
    colors: np.ndarray = None


def bind_mesh(mesh, cloud, k=8, object_ref=0, dx=1.0):
    """Bind mesh vertices to the K nearest same-object particles.

    Weights are w_j ~ 1 / (d_j + eps) with eps = 1e-8 * dx, normalized per
    vertex. Raises when the object has fewer than K particles.
    """
    if isinstance(object_ref, str):
        if object_ref not in cloud.object_names:
            raise SceneTwinError(f"unknown object id {object_ref!r}")
        index = cloud.object_names.index(object_ref)
    else:
        index = int(object_ref)
    sel = np.flatnonzero(cloud.object_ids == index)
    if len(sel) < k:
        raise SceneTwinError(
            f"object has {len(sel)} particles but K={k}; lower K to bind this mesh"
        )
    pts = cloud.positions[sel]
    dists, local = cKDTree(pts).query(mesh.vertices, k=k)
    if k == 1:
        dists = dists[:, None]
        local = local[:, None]
    eps = 1e-8 * dx
    w = 1.0 / (dists + eps)
    w /= w.sum(axis=1, keepdims=True)
    indices = sel[local]
    return VertexBinding(
        object_index=index,
        cloud_size=len(cloud),
        particle_indices=indices.astype(np.int64),
        weights=w,
        ref_positions=cloud.positions[indices].copy(),
        base_vertices=mesh.vertices.copy(),
        triangles=mesh.triangles.copy(),
        colors=None if mesh.colors is None else mesh.colors.copy(),
    )


def deform_mesh(binding, frame_cloud):
    """Apply frame particle displacements to the bound mesh.

    Frame 0 input reproduces the registered mesh bit-exactly (zero
    displacement adds exact zeros).
    """
    if len(frame_cloud) != binding.cloud_size:
        raise SceneTwinError(
            f"frame particle count {len(frame_cloud)} does not match the "
            f"binding ({binding.cloud_size}); particle ids are positional"
        )
    idx = binding.particle_indices
    if not np.all(frame_cloud.object_ids[idx[:, 0]] == binding.object_index):
        raise SceneTwinError("frame particles do not match the bound object")
    disp = frame_cloud.positions[idx] - binding.ref_positions
    vertex_disp = (binding.weights[:, :, None] * disp).sum(axis=1)
    return TriangleMesh(
        binding.base_vertices + vertex_disp, binding.triangles, binding.colors
    )


@dataclass
class TrackSet:
    particle_indices: np.ndarray   # (n,)
    positions: np.ndarray          # (frames, n, 3)

    @property
    def frame_count(self):
        return self.positions.shape[0]


def sample_tracks(snapshots, stride=1):
    """Track every stride-th particle (by index order) across all frames.

    Positions are copied views of the snapshots: a track sample equals the
    corresponding snapshot position bit-exactly.
    """
    if stride < 1:
        raise SceneTwinError("track stride must be >= 1")
    snaps = list(snapshots)
    if not snaps:
        raise SceneTwinError("no snapshots to track")
    n = len(snaps[0])
    ids = np.arange(0, n, stride, dtype=np.int64)
    pos = np.stack([s.positions[ids] for s in snaps], axis=0)
    return TrackSet(particle_indices=ids, positions=pos)


def save_tracks(path, tracks):
    lines = ["frame particle_id x y z"]
    ids = tracks.particle_indices.tolist()
    for f in range(tracks.frame_count):
        for pid, p in zip(ids, tracks.positions[f].tolist()):
            lines.append(f"{f} {pid} {p[0]!r} {p[1]!r} {p[2]!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tracks(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "frame particle_id x y z":
            raise SceneTwinError(f"{path}: unexpected track header {header!r}")
        frames = {}
        ids = None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            f = int(parts[0])
            frames.setdefault(f, []).append(
                (int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]))
            )
    order = sorted(frames)
    first = frames[order[0]]
    ids = np.array([row[0] for row in first], dtype=np.int64)
    pos = np.array(
        [[row[1:] for row in frames[f]] for f in order], dtype=np.float64
    )
    return TrackSet(particle_indices=ids, positions=pos)
