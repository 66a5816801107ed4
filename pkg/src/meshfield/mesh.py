"""Indexed triangle meshes with optional per-vertex attributes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle soup over shared vertices.

    ``colors`` are RGB in [0, 1], ``normals`` unit vectors and ``uvs`` in
    [0, 1]^2, all per vertex and all optional.
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        for name, width in (("colors", 3), ("normals", 3), ("uvs", 2)):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, width)
            if len(a) != len(v):
                raise MeshError(f"{name} has {len(a)} rows for {len(v)} vertices")
            object.__setattr__(self, name, a)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if self.normals is not None and len(self.normals):
            err = np.abs(np.linalg.norm(self.normals, axis=1) - 1.0).max()
            if err > 1e-6:
                raise MeshError(f"vertex normals not unit length (max error {err:.2e})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        if "face_normals" not in self._cache:
            t = self.triangles()
            n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
            ln = np.linalg.norm(n, axis=1, keepdims=True)
            self._cache["face_normals"] = n / np.where(ln > 0, ln, 1.0)
        return self._cache["face_normals"]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def with_attributes(self, **kw) -> "TriangleMesh":
        return replace(self, _cache={}, **kw)

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0), rotation=None) -> "TriangleMesh":
        """Return ``scale * R @ v + offset``; normals rotate, other attributes carry over."""
        v = self.vertices
        n = self.normals
        if rotation is not None:
            rotation = np.asarray(rotation, dtype=np.float64)
            v = v @ rotation.T
            if n is not None:
                n = n @ rotation.T
        v = scale * v + np.asarray(offset, dtype=np.float64)
        if n is not None and scale < 0:
            n = -n
        return replace(self, vertices=v, normals=n, _cache={})

    def drop_degenerate(self, tol: float = DEGENERATE_AREA) -> "TriangleMesh":
        keep = self.face_areas() > tol
        n_bad = int((~keep).sum())
        if n_bad == 0:
            return self
        log.warning("dropping %d degenerate triangles (area <= %g)", n_bad, tol)
        return replace(self, faces=self.faces[keep], _cache={})

    def vertex_normals_from_faces(self) -> np.ndarray:
        """Area-weighted vertex normals (unit; isolated vertices get +z)."""
        t = self.triangles()
        fn = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        ln = np.linalg.norm(vn, axis=1, keepdims=True)
        vn = np.where(ln > 0, vn / np.where(ln > 0, ln, 1.0), np.array([0.0, 0.0, 1.0]))
        return vn

    def edges_manifold_report(self) -> dict[str, int]:
        """Count undirected edges by how many faces share them."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return {
            "edges": int(len(counts)),
            "boundary": int((counts == 1).sum()),
            "manifold": int((counts == 2).sum()),
            "nonmanifold": int((counts > 2).sum()),
        }

    def is_closed(self) -> bool:
        r = self.edges_manifold_report()
        return r["edges"] > 0 and r["manifold"] == r["edges"]


def normalize_to_cube(mesh: TriangleMesh, extent: float = 0.9) -> tuple[TriangleMesh, float, np.ndarray]:
    """Center the bounding box at the origin and scale its longest side to ``2 * extent``.

    The transform is ``v' = scale * (v + offset)``: the offset is applied
    first, then the scale.  Invert with ``v = v' / scale - offset``.
    """
    if mesh.n_vertices == 0:
        raise MeshError("empty geometry")
    lo, hi = mesh.bounds()
    offset = -(lo + hi) / 2.0
    longest = float((hi - lo).max())
    scale = 2.0 * extent / longest if longest > 0 else 1.0
    out = mesh.transformed(scale=scale, offset=scale * offset)
    return out, scale, offset


def denormalize(mesh: TriangleMesh, scale: float, offset) -> TriangleMesh:
    return mesh.transformed(scale=1.0 / scale, offset=-np.asarray(offset, dtype=np.float64))


@dataclass
class SurfaceSamples:
    points: np.ndarray
    faces: np.ndarray
    barycentric: np.ndarray
    normals: np.ndarray
    colors: Optional[np.ndarray]
    uvs: Optional[np.ndarray]
    missing: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.points)


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0, normals: str = "face") -> SurfaceSamples:
    """Area-weighted uniform surface samples with barycentric attribute interpolation.

    ``normals="face"`` returns the sampled face's normal; ``"vertex"``
    interpolates vertex normals when the mesh has them.  Attributes the mesh
    lacks come back as ``None`` and are listed in ``missing``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mesh.n_faces == 0:
        raise MeshError("empty geometry")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    face = np.minimum(face, mesh.n_faces - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    corners = mesh.faces[face]
    pts = np.einsum("nk,nkd->nd", bary, mesh.vertices[corners])

    missing = []

    def interp(attr):
        return np.einsum("nk,nkd->nd", bary, attr[corners])

    if normals == "vertex" and mesh.normals is not None:
        nrm = interp(mesh.normals)
        nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
    else:
        nrm = mesh.face_normals()[face]
    colors = interp(mesh.colors) if mesh.colors is not None else None
    uvs = interp(mesh.uvs) if mesh.uvs is not None else None
    if colors is None:
        missing.append("colors")
    if uvs is None:
        missing.append("uvs")
    return SurfaceSamples(pts, face, bary, nrm, colors, uvs, tuple(missing))
