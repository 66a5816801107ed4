"""OBJ and binary PLY reading/writing.

OBJ: ``v x y z [r g b]``, ``vt``, ``vn`` and ``f a/b/c`` corners.  PLY:
binary little-endian with vertex properties ``x y z nx ny nz red green blue
u v`` (colors as uchar) and a ``uchar int`` face list.  Attributes present
on write are present on read.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .mesh import MeshError, TriangleMesh

log = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def load_mesh(path, drop_degenerate: bool = True) -> TriangleMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = read_obj(path)
    elif suffix == ".ply":
        mesh = read_ply(path)
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix}")
    return mesh.drop_degenerate() if drop_degenerate else mesh


def save_mesh(path, mesh: TriangleMesh) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        write_obj(path, mesh)
    elif suffix == ".ply":
        write_ply(path, mesh)
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix}")


# ---------------------------------------------------------------- PLY

def write_ply(path, mesh: TriangleMesh) -> None:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if mesh.normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if mesh.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if mesh.uvs is not None:
        fields += [("u", "<f4"), ("v", "<f4")]
    vert = np.empty(mesh.n_vertices, dtype=fields)
    vert["x"], vert["y"], vert["z"] = mesh.vertices.T
    if mesh.normals is not None:
        vert["nx"], vert["ny"], vert["nz"] = mesh.normals.T
    if mesh.colors is not None:
        c = np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)
        vert["red"], vert["green"], vert["blue"] = c.T
    if mesh.uvs is not None:
        vert["u"], vert["v"] = mesh.uvs.T

    face = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face["n"] = 3
    face["idx"] = mesh.faces

    names = {"<f4": "float", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {mesh.n_vertices}"]
    header += [f"property {names[t]} {n}" for n, t in fields]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vert.tobytes())
        fh.write(face.tobytes())


def read_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"{path}: not a PLY file")
    nl = data.index(b"\n", end)
    lines = data[:nl].decode("ascii").splitlines()
    body = memoryview(data)[nl + 1:]

    elements: list[tuple[str, int, list]] = []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            if tok[1] != "binary_little_endian":
                raise MeshError(f"{path}: only binary_little_endian PLY is supported")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))

    offset = 0
    vertex = None
    faces = np.zeros((0, 3), dtype=np.int64)
    for name, count, props in elements:
        has_list = any(isinstance(p[1], tuple) for p in props)
        if not has_list:
            dt = np.dtype([(p[0], p[1]) for p in props])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            if name == "vertex":
                vertex = arr
            continue
        if name != "face" or len(props) != 1:
            raise MeshError(f"{path}: unsupported list element {name!r}")
        _, (_, count_t, idx_t) = props[0]
        count_t, idx_t = np.dtype(count_t), np.dtype(idx_t)
        # fast path: all triangles
        dt = np.dtype([("n", count_t), ("idx", idx_t, (3,))])
        if count and offset + dt.itemsize * count <= len(body):
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            if np.all(arr["n"] == 3):
                faces = arr["idx"].astype(np.int64)
                offset += dt.itemsize * count
                continue
        faces, offset = _read_polygon_list(body, offset, count, count_t, idx_t)
    if vertex is None:
        raise MeshError(f"{path}: no vertex element")

    names = vertex.dtype.names
    v = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(np.float64)
    normals = colors = uvs = None
    if {"nx", "ny", "nz"} <= set(names):
        normals = np.stack([vertex["nx"], vertex["ny"], vertex["nz"]], axis=1).astype(np.float64)
        normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    if {"red", "green", "blue"} <= set(names):
        colors = np.stack([vertex["red"], vertex["green"], vertex["blue"]], axis=1).astype(np.float64)
        if vertex.dtype["red"].kind in "iu":
            colors /= 255.0
    if {"u", "v"} <= set(names):
        uvs = np.stack([vertex["u"], vertex["v"]], axis=1).astype(np.float64)
    elif {"s", "t"} <= set(names):
        uvs = np.stack([vertex["s"], vertex["t"]], axis=1).astype(np.float64)
    return TriangleMesh(v, faces, colors=colors, normals=normals, uvs=uvs)


def _read_polygon_list(body, offset, count, count_t, idx_t):
    tris = []
    for _ in range(count):
        n = int(np.frombuffer(body, dtype=count_t, count=1, offset=offset)[0])
        offset += count_t.itemsize
        idx = np.frombuffer(body, dtype=idx_t, count=n, offset=offset).astype(np.int64)
        offset += idx_t.itemsize * n
        for k in range(1, n - 1):
            tris.append((idx[0], idx[k], idx[k + 1]))
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3), offset


# ---------------------------------------------------------------- OBJ

def write_obj(path, mesh: TriangleMesh) -> None:
    lines = []
    if mesh.colors is not None:
        for p, c in zip(mesh.vertices, mesh.colors):
            lines.append("v %.9g %.9g %.9g %.6g %.6g %.6g" % (*p, *c))
    else:
        lines.extend("v %.9g %.9g %.9g" % tuple(p) for p in mesh.vertices)
    if mesh.uvs is not None:
        lines.extend("vt %.9g %.9g" % tuple(t) for t in mesh.uvs)
    if mesh.normals is not None:
        lines.extend("vn %.9g %.9g %.9g" % tuple(n) for n in mesh.normals)
    has_t, has_n = mesh.uvs is not None, mesh.normals is not None
    for f in mesh.faces + 1:
        if has_t and has_n:
            lines.append("f " + " ".join(f"{i}/{i}/{i}" for i in f))
        elif has_t:
            lines.append("f " + " ".join(f"{i}/{i}" for i in f))
        elif has_n:
            lines.append("f " + " ".join(f"{i}//{i}" for i in f))
        else:
            lines.append("f %d %d %d" % tuple(f))
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    v, vc, vt, vn = [], [], [], []
    corners = []
    for raw in Path(path).read_text().splitlines():
        tok = raw.split()
        if not tok:
            continue
        if tok[0] == "v":
            v.append([float(x) for x in tok[1:4]])
            if len(tok) >= 7:
                vc.append([float(x) for x in tok[4:7]])
        elif tok[0] == "vt":
            vt.append([float(x) for x in tok[1:3]])
        elif tok[0] == "vn":
            vn.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            poly = [_obj_corner(c, len(v), len(vt), len(vn)) for c in tok[1:]]
            for k in range(1, len(poly) - 1):
                corners.append((poly[0], poly[k], poly[k + 1]))
    verts = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(vc, dtype=np.float64) if vc and len(vc) == len(v) else None
    if vc and colors is None:
        log.warning("%s: per-vertex colors on only some vertices; ignored", path)
    c = np.asarray(corners, dtype=np.int64).reshape(-1, 3, 3)
    vi, ti, ni = c[..., 0], c[..., 1], c[..., 2]
    use_t = bool(vt) and np.all(ti >= 0)
    use_n = bool(vn) and np.all(ni >= 0)
    if (not use_t or np.array_equal(ti, vi)) and (not use_n or np.array_equal(ni, vi)):
        uvs = np.asarray(vt, dtype=np.float64)[: len(verts)] if use_t and len(vt) >= len(v) else None
        normals = np.asarray(vn, dtype=np.float64)[: len(verts)] if use_n and len(vn) >= len(v) else None
        if normals is not None:
            normals = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
        return TriangleMesh(verts, vi, colors=colors, normals=normals, uvs=uvs)

    # attribute indices differ from position indices: split vertices per unique corner tuple
    key = np.stack([vi.ravel(), ti.ravel() if use_t else vi.ravel(), ni.ravel() if use_n else vi.ravel()], axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    out_v = verts[uniq[:, 0]]
    out_c = colors[uniq[:, 0]] if colors is not None else None
    out_t = np.asarray(vt, dtype=np.float64)[uniq[:, 1]] if use_t else None
    out_n = None
    if use_n:
        out_n = np.asarray(vn, dtype=np.float64)[uniq[:, 2]]
        out_n /= np.maximum(np.linalg.norm(out_n, axis=1, keepdims=True), 1e-300)
    return TriangleMesh(out_v, faces, colors=out_c, normals=out_n, uvs=out_t)


def _obj_corner(tok: str, nv: int, nt: int, nn: int) -> tuple[int, int, int]:
    parts = tok.split("/")

    def idx(s, n):
        if not s:
            return -1
        i = int(s)
        return i - 1 if i > 0 else n + i

    vi = idx(parts[0], nv)
    ti = idx(parts[1], nt) if len(parts) > 1 else -1
    ni = idx(parts[2], nn) if len(parts) > 2 else -1
    return vi, ti, ni
