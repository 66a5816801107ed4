"""A procedural textured humanoid: clothed "scan", slimmer UV-mapped body, joints.

Both surfaces are level sets of smooth unions of capsules, meshed with
marching cubes.  The figure is mirror-symmetric in x, faces -z (toward a
camera at azimuth 0) and has a nose bump so front and back differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh
from .recon.mcubes import VoxelGrid, marching_cubes

# (name, a, b, radius); a == b is a sphere.  Mirrored limbs are generated below.
_CENTER = [
    ("head", (0.0, 0.70, 0.0), (0.0, 0.70, 0.0), 0.13),
    ("nose", (0.0, 0.69, -0.125), (0.0, 0.69, -0.125), 0.035),
    ("neck", (0.0, 0.50, 0.0), (0.0, 0.62, 0.0), 0.055),
    ("chest", (0.0, 0.18, 0.0), (0.0, 0.38, 0.0), 0.17),
    ("hips", (-0.08, 0.0, 0.0), (0.08, 0.0, 0.0), 0.13),
]
_SIDE = [
    ("shoulder", (0.10, 0.43, 0.0), (0.22, 0.42, 0.0), 0.07),
    ("upper_arm", (0.22, 0.42, 0.0), (0.34, 0.14, 0.0), 0.06),
    ("forearm", (0.34, 0.14, 0.0), (0.41, -0.12, 0.0), 0.05),
    ("hand", (0.42, -0.19, 0.0), (0.42, -0.19, 0.0), 0.06),
    ("thigh", (0.10, -0.06, 0.0), (0.12, -0.45, 0.0), 0.085),
    ("shin", (0.12, -0.45, 0.0), (0.12, -0.80, 0.0), 0.06),
    ("foot", (0.12, -0.84, 0.01), (0.12, -0.84, -0.10), 0.045),
]

JOINTS = {
    "head": (0.0, 0.70, 0.0), "neck": (0.0, 0.55, 0.0), "pelvis": (0.0, 0.0, 0.0),
    "r_shoulder": (-0.22, 0.42, 0.0), "l_shoulder": (0.22, 0.42, 0.0),
    "r_elbow": (-0.34, 0.14, 0.0), "l_elbow": (0.34, 0.14, 0.0),
    "r_wrist": (-0.41, -0.12, 0.0), "l_wrist": (0.41, -0.12, 0.0),
    "r_knee": (-0.12, -0.45, 0.0), "l_knee": (0.12, -0.45, 0.0),
    "r_ankle": (-0.12, -0.80, 0.0), "l_ankle": (0.12, -0.80, 0.0),
}


def _capsules():
    caps = list(_CENTER)
    for name, a, b, r in _SIDE:
        caps.append(("l_" + name, a, b, r))
        caps.append(("r_" + name, (-a[0], a[1], a[2]), (-b[0], b[1], b[2]), r))
    return caps


def _capsule_distance(x, a, b, r, zscale=1.0):
    a = np.asarray(a)
    b = np.asarray(b)
    q = x.copy()
    q[:, 2] /= zscale
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(q)) if denom == 0 else np.clip((q - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(q - (a + t[:, None] * ab), axis=1) - r


def _smooth_min(a, b, k):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1 - h) + a * h - k * h * (1 - h)


def body_field(x, inflate: float = 0.0) -> np.ndarray:
    """Implicit humanoid; negative inside.  ``inflate`` thickens it uniformly."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    out = None
    for name, a, b, r in _capsules():
        zs = 0.7 if name in ("chest", "hips") else 1.0
        d = _capsule_distance(x, a, b, r, zs)
        out = d if out is None else _smooth_min(out, d, 0.03)
    return out - inflate


def scan_field(x) -> np.ndarray:
    """Clothed surface: a thicker layer below the neck, plus hair."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    cloth = 0.03 * np.clip((0.5 - x[:, 1]) / 0.08, 0.0, 1.0)
    d = body_field(x) - 0.006 - cloth
    hair = _capsule_distance(x, (0.0, 0.735, 0.03), (0.0, 0.735, 0.03), 0.13)
    return _smooth_min(d, hair, 0.02)


def scan_colors(x) -> np.ndarray:
    """Skin, striped shirt, trousers and hair, as a function of position."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = x[:, 1]
    skin = np.array([0.92, 0.74, 0.60])
    shirt = np.array([0.80, 0.22, 0.20])
    stripe = np.array([0.95, 0.90, 0.35])
    pants = np.array([0.20, 0.30, 0.65])
    hair = np.array([0.25, 0.16, 0.10])
    c = np.tile(skin, (len(x), 1))
    arm = np.abs(x[:, 0]) > 0.25
    torso = (y < 0.50) & (y > 0.02) & ~(arm & (y < 0.25))
    stripes = np.sin(30.0 * y) > 0.55
    c[torso] = np.where(stripes[torso, None], stripe, shirt)
    c[(y <= 0.02) & ~arm] = pants
    c[(y < -0.76)] = np.array([0.15, 0.15, 0.15])  # shoes
    c[(y > 0.70) & (x[:, 2] > -0.07)] = hair
    c[(y > 0.80)] = hair
    return c


def cylindrical_uv(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    u = np.arctan2(x[:, 0], -x[:, 2]) / (2 * np.pi) + 0.5
    v = np.clip((x[:, 1] + 1.0) / 2.0, 0.0, 1.0)
    return np.stack([u, v], axis=1)


def _mesh_field(fn, resolution: int) -> TriangleMesh:
    a = np.linspace(-1.0, 1.0, resolution)
    pts = np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)
    sdf = fn(pts).reshape(resolution, resolution, resolution)
    return marching_cubes(VoxelGrid(sdf))


@dataclass
class Humanoid:
    scan: TriangleMesh
    body: TriangleMesh
    joints3d: np.ndarray  # (J, 3)
    joint_names: list
    joint_regressor: list  # per joint, the body-vertex indices averaged into it


def joint_regressor_for(body: TriangleMesh, joints3d, k: int = 8) -> list:
    """For each joint, the ``k`` body vertices nearest to it."""
    out = []
    for j in np.asarray(joints3d):
        d = np.linalg.norm(body.vertices - j, axis=1)
        out.append(np.sort(np.argsort(d, kind="stable")[:k]).tolist())
    return out


def regress_joints(body: TriangleMesh, regressor) -> np.ndarray:
    return np.stack([body.vertices[np.asarray(ix)].mean(axis=0) for ix in regressor])


def make_humanoid(resolution: int = 96) -> Humanoid:
    """Deterministic synthetic subject; both meshes live in [-1, 1]^3."""
    scan = _mesh_field(scan_field, resolution)
    scan = scan.with_attributes(colors=scan_colors(scan.vertices),
                                normals=scan.vertex_normals_from_faces())
    body = _mesh_field(body_field, resolution)
    body = body.with_attributes(uvs=cylindrical_uv(body.vertices), colors=np.full((body.n_vertices, 3), 0.7))
    names = list(JOINTS)
    j3 = np.array([JOINTS[n] for n in names])
    reg = joint_regressor_for(body, j3)
    return Humanoid(scan, body, regress_joints(body, reg), names, reg)
