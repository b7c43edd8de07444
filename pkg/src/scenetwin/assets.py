"""File IO for meshes, images and depth rasters.

Formats:
  meshes  - Wavefront OBJ (ascii) and binary little-endian PLY
  images  - 8-bit RGB(A) PNG; 16-bit grayscale PNG for debug dumps
  depth   - raw float32 raster with a 16-byte header:
            magic "DPTH", u32 width, u32 height, u32 reserved
"""

import os
import struct

import numpy as np
from PIL import Image

from .errors import ConfigError
from .scene import DepthImage, MaskImage, TriangleMesh

DEPTH_MAGIC = b"DPTH"


# ---------------------------------------------------------------------------
# meshes


def load_mesh(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        mesh = _read_obj(path)
    elif ext == ".ply":
        mesh = _read_ply(path)
    else:
        raise ConfigError(f"unsupported mesh format {ext!r} for {path}")
    return mesh.validated(os.path.basename(path))


def save_mesh(path, mesh):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        _write_obj(path, mesh)
    elif ext == ".ply":
        _write_ply(path, mesh)
    else:
        raise ConfigError(f"unsupported mesh format {ext!r} for {path}")


def _read_obj(path):
    verts, colors, tris = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                vals = [float(x) for x in parts[1:]]
                if len(vals) not in (3, 6):
                    raise ConfigError(f"{path}:{lineno}: bad vertex line")
                verts.append(vals[:3])
                if len(vals) == 6:
                    colors.append(vals[3:])
            elif tag == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if len(idx) < 3:
                    raise ConfigError(f"{path}:{lineno}: face needs >= 3 vertices")
                for k in range(1, len(idx) - 1):   # fan-triangulate
                    tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts:
        raise ConfigError(f"{path}: no vertices")
    cols = np.array(colors) if len(colors) == len(verts) else None
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int32), cols)


def _write_obj(path, mesh):
    lines = []
    if mesh.colors is not None:
        for v, c in zip(mesh.vertices.tolist(), mesh.colors.tolist()):
            lines.append(f"v {v[0]!r} {v[1]!r} {v[2]!r} {c[0]!r} {c[1]!r} {c[2]!r}")
    else:
        for v in mesh.vertices.tolist():
            lines.append(f"v {v[0]!r} {v[1]!r} {v[2]!r}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply_header(fh, path):
    """Parse the ascii header; returns (elements, fmt) with byte offsets implied."""
    line = fh.readline().strip()
    if line != b"ply":
        raise ConfigError(f"{path}: not a PLY file")
    fmt = None
    elements = []   # list of (name, count, [(prop_name, dtype, is_list, count_dtype)])
    while True:
        line = fh.readline()
        if not line:
            raise ConfigError(f"{path}: truncated PLY header")
        parts = line.decode("ascii", "replace").split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ConfigError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], _PLY_TYPES[parts[3]], True, _PLY_TYPES[parts[2]]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]], False, None))
        elif parts[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise ConfigError(f"{path}: only binary_little_endian PLY is supported")
    return elements


def _read_ply(path):
    with open(path, "rb") as fh:
        elements = _read_ply_header(fh, path)
        data = {}
        for name, count, props in elements:
            if any(p[2] for p in props):
                # list property (faces): parse sequentially
                rows = []
                for _ in range(count):
                    row = []
                    for pname, dtype, is_list, cnt_dtype in props:
                        if is_list:
                            n = int(np.frombuffer(fh.read(np.dtype(cnt_dtype).itemsize),
                                                  dtype="<" + cnt_dtype)[0])
                            vals = np.frombuffer(fh.read(n * np.dtype(dtype).itemsize),
                                                 dtype="<" + dtype)
                            row.append(vals)
                        else:
                            row.append(np.frombuffer(fh.read(np.dtype(dtype).itemsize),
                                                     dtype="<" + dtype)[0])
                    rows.append(row)
                data[name] = (props, rows)
            else:
                dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                buf = fh.read(count * dt.itemsize)
                if len(buf) != count * dt.itemsize:
                    raise ConfigError(f"{path}: truncated PLY data")
                data[name] = (props, np.frombuffer(buf, dtype=dt))
    if "vertex" not in data:
        raise ConfigError(f"{path}: PLY has no vertex element")
    props, varr = data["vertex"]
    names = [p[0] for p in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise ConfigError(f"{path}: PLY vertex element lacks {need}")
    verts = np.stack(
        [varr["x"], varr["y"], varr["z"]], axis=1
    ).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        rgb = np.stack([varr["red"], varr["green"], varr["blue"]], axis=1)
        colors = rgb.astype(np.float64)
        if rgb.dtype.kind in "ui":
            colors /= 255.0
    tris = []
    if "face" in data:
        fprops, rows = data["face"]
        for row in rows:
            idx = row[0]
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    return TriangleMesh(verts, np.array(tris, dtype=np.int32).reshape(-1, 3), colors)


def _write_ply(path, mesh):
    has_color = mesh.colors is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(mesh.vertices)}",
              "property double x", "property double y", "property double z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {len(mesh.triangles)}",
               "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if has_color:
            rgb = np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)
            dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                           ("red", "u1"), ("green", "u1"), ("blue", "u1")])
            rec = np.empty(len(mesh.vertices), dtype=dt)
            rec["x"], rec["y"], rec["z"] = mesh.vertices.T
            rec["red"], rec["green"], rec["blue"] = rgb.T
        else:
            dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
            rec = np.empty(len(mesh.vertices), dtype=dt)
            rec["x"], rec["y"], rec["z"] = mesh.vertices.T
        fh.write(rec.tobytes())
        ft = np.dtype([("n", "u1"), ("a", "<i4"), ("b", "<i4"), ("c", "<i4")])
        frec = np.empty(len(mesh.triangles), dtype=ft)
        frec["n"] = 3
        frec["a"], frec["b"], frec["c"] = mesh.triangles.T.astype(np.int32)
        fh.write(frec.tobytes())


# ---------------------------------------------------------------------------
# depth rasters


def write_depth_raster(path, depth):
    """Serialize a DepthImage; invalid pixels are stored as NaN."""
    values = np.asarray(depth.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<III", depth.width, depth.height, 0))
        fh.write(values.tobytes())


def read_depth_raster(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != DEPTH_MAGIC:
            raise ConfigError(f"{path}: not a DPTH depth raster")
        width, height, _ = struct.unpack("<III", head[4:])
        buf = fh.read(width * height * 4)
        if len(buf) != width * height * 4:
            raise ConfigError(f"{path}: truncated depth raster")
    values = np.frombuffer(buf, dtype="<f4").reshape(height, width)
    return DepthImage(values.astype(np.float64))


# ---------------------------------------------------------------------------
# images


def load_image(path):
    """PNG -> float RGB in [0,1], shape (H,W,3)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image_u8(path, array):
    """uint8 (H,W,3) -> PNG."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("save_image_u8 expects a uint8 array")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def quantize_u8(image_float):
    """[0,1] float -> uint8 with round-half-to-even."""
    return np.clip(np.rint(np.asarray(image_float) * 255.0), 0, 255).astype(np.uint8)


def load_mask(path):
    """PNG -> boolean mask (luma > 0.5)."""
    img = load_image(path)
    luma = img @ np.array([0.299, 0.587, 0.114])
    return MaskImage(luma > 0.5)


def save_mask(path, mask):
    arr = np.where(mask.values, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def save_gray16(path, array_float):
    """[0,1] float (H,W) -> 16-bit grayscale PNG (debug dumps)."""
    arr = np.clip(np.rint(np.asarray(array_float) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr, mode="I;16").save(path, format="PNG")
