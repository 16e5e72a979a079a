"""Mesh ingestion (ASCII/binary STL, OBJ triangles) and test primitives."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .geometry import TriMesh


def load_mesh(path: str | Path, material: int = 0) -> TriMesh:
    """Load an STL or OBJ file by extension."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".stl":
        return load_stl(path, material=material)
    if ext == ".obj":
        return load_obj(path, material=material)
    raise IoFailure(f"unsupported mesh format: {path.name}")


def _is_binary_stl(data: bytes) -> bool:
    # ASCII files start with "solid", but some binary exporters do too;
    # trust the triangle count arithmetic over the header text.
    if len(data) < 84:
        return False
    count = struct.unpack_from("<I", data, 80)[0]
    return len(data) == 84 + count * 50


def load_stl(path: str | Path, material: int = 0) -> TriMesh:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if _is_binary_stl(data):
        count = struct.unpack_from("<I", data, 80)[0]
        raw = np.frombuffer(data, dtype=np.uint8, count=count * 50, offset=84)
        tris = raw.reshape(count, 50)[:, 12:48].copy().view("<f4").reshape(count, 3, 3)
        verts = tris.reshape(-1, 3).astype(np.float64)
    else:
        verts = _parse_ascii_stl(data.decode("ascii", errors="replace"))
    if verts.shape[0] == 0:
        raise IoFailure(f"{path}: no triangles")
    return _dedup(verts, material)


def _parse_ascii_stl(text: str) -> np.ndarray:
    coords = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0] == "vertex":
            coords.append([float(parts[1]), float(parts[2]), float(parts[3])])
    arr = np.asarray(coords, dtype=np.float64)
    if arr.shape[0] % 3 != 0:
        raise IoFailure("ASCII STL vertex count is not a multiple of 3")
    return arr


def _dedup(tri_verts: np.ndarray, material: int) -> TriMesh:
    """Merge exactly-equal vertices from a triangle soup."""
    uniq, inverse = np.unique(tri_verts, axis=0, return_inverse=True)
    tris = inverse.reshape(-1, 3).astype(np.int32)
    return TriMesh(uniq, tris, material=material)


def load_obj(path: str | Path, material: int = 0) -> TriMesh:
    """Parse OBJ v/f records; polygons are fan-triangulated, others ignored."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as f:
            for line in f:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v" and len(parts) >= 4:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                elif parts[0] == "f" and len(parts) >= 4:
                    idx = []
                    for token in parts[1:]:
                        raw = token.split("/")[0]
                        i = int(raw)
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if not faces:
        raise IoFailure(f"{path}: no triangular faces")
    return TriMesh(np.asarray(verts, dtype=np.float64),
                   np.asarray(faces, dtype=np.int32), material=material)


def save_stl(path: str | Path, mesh: TriMesh) -> None:
    """Write a binary STL (useful for building test fixtures)."""
    tris = mesh.vertices[mesh.triangles]
    n = tris.shape[0]
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    normals = np.cross(e1, e2)
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.where(lens > 0, normals / np.maximum(lens, 1e-300), 0.0)
    rec = np.zeros(n, dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = normals
    rec["v"] = tris
    with open(path, "wb") as f:
        f.write(b"\0" * 80)
        f.write(struct.pack("<I", n))
        f.write(rec.tobytes())


_BOX_FACES = np.array([
    [0, 1, 2], [0, 2, 3],  # -z
    [4, 6, 5], [4, 7, 6],  # +z
    [0, 4, 5], [0, 5, 1],  # -y
    [3, 2, 6], [3, 6, 7],  # +y
    [1, 5, 6], [1, 6, 2],  # +x
    [0, 3, 7], [0, 7, 4],  # -x
], dtype=np.int32)


def box_mesh(size, center=(0.0, 0.0, 0.0), material: int = 0) -> TriMesh:
    """Axis-aligned box with outward-facing winding."""
    sx, sy, sz = (float(s) / 2.0 for s in np.broadcast_to(size, (3,)))
    cx, cy, cz = center
    corners = np.array([
        [cx - sx, cy - sy, cz - sz],
        [cx + sx, cy - sy, cz - sz],
        [cx + sx, cy + sy, cz - sz],
        [cx - sx, cy + sy, cz - sz],
        [cx - sx, cy - sy, cz + sz],
        [cx + sx, cy - sy, cz + sz],
        [cx + sx, cy + sy, cz + sz],
        [cx - sx, cy + sy, cz + sz],
    ])
    return TriMesh(corners, _BOX_FACES, material=material)


def quad_mesh(size_x: float, size_y: float, center=(0.0, 0.0, 0.0),
              material: int = 0) -> TriMesh:
    """Flat rectangle in the local XY plane, normal +z."""
    hx, hy = size_x / 2.0, size_y / 2.0
    cx, cy, cz = center
    verts = np.array([
        [cx - hx, cy - hy, cz],
        [cx + hx, cy - hy, cz],
        [cx + hx, cy + hy, cz],
        [cx - hx, cy + hy, cz],
    ])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return TriMesh(verts, tris, material=material)
