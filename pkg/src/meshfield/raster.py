"""Orthographic cameras, multi-channel images and a z-buffer rasterizer.

Pixel convention, shared by projection, feature querying and rasterization:
pixel ``(row i, col j)`` has its center at continuous coordinate
``(u, v) = (j, i)``; ``u`` grows to the right and ``v`` downward.  The view
square ``[-span, span]^2`` covers ``u, v in [-0.5, W - 0.5]``, so a view
corner lands on the image corner (the outer edge of the corner pixel).

Camera space: ``c = R @ x``; ``c_x`` right, ``c_y`` up, ``c_z`` is depth and
grows away from the viewer.  The ``normal`` channel stores camera-space
normals with the depth axis reversed, ``(n_x, n_y, -n_z)``, flipped to face
the viewer, so a surface facing the camera reads ``(0, 0, 1)``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .mesh import TriangleMesh

CHANNEL_WIDTH = {"rgb": 3, "alpha": 1, "normal": 3, "uv": 2, "depth": 1}
MCI_MAGIC = b"MCI1"


class RenderError(ValueError):
    pass


def rotation_y(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_x(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True, eq=False)
class OrthoCamera:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    span: float = 1.0
    height: int = 512
    width: int = 512

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation is not orthonormal")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")
        if not self.span > 0:
            raise ValueError("span must be positive")
        object.__setattr__(self, "rotation", r)

    @property
    def view_dir(self) -> np.ndarray:
        """World direction of increasing depth (away from the viewer)."""
        return self.rotation[2].copy()

    def with_size(self, height: int, width: int) -> "OrthoCamera":
        return OrthoCamera(self.rotation, self.span, height, width)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "span": self.span,
                "height": self.height, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "OrthoCamera":
        return cls(np.asarray(d["rotation"]), float(d["span"]), int(d["height"]), int(d["width"]))


def project(camera: OrthoCamera, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map world points to continuous pixel coordinates ``(u, v)`` and depth."""
    x = np.asarray(x, dtype=np.float64)
    c = x @ camera.rotation.T
    u = (c[..., 0] / camera.span + 1.0) * (camera.width / 2.0) - 0.5
    v = (1.0 - c[..., 1] / camera.span) * (camera.height / 2.0) - 0.5
    return u, v, c[..., 2]


def unproject(camera: OrthoCamera, u, v, depth) -> np.ndarray:
    u, v, depth = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (u, v, depth)))
    cx = ((u + 0.5) * (2.0 / camera.width) - 1.0) * camera.span
    cy = (1.0 - (v + 0.5) * (2.0 / camera.height)) * camera.span
    c = np.stack([cx, cy, depth], axis=-1)
    return c @ camera.rotation


def pixel_ray(camera: OrthoCamera, u, v, depth: float = -10.0) -> tuple[np.ndarray, np.ndarray]:
    """Origin (at ``depth``) and world direction of the ray through pixel coordinates."""
    o = unproject(camera, u, v, depth)
    return o, np.broadcast_to(camera.view_dir, o.shape).copy()


def make_view_pair(azimuth: float, elevation: float = 0.0, span: float = 1.0,
                   size: int = 512) -> tuple[OrthoCamera, OrthoCamera]:
    """Front camera orbiting the vertical axis, and its back twin rotated 180 degrees."""
    r = rotation_x(elevation) @ rotation_y(azimuth)
    front = OrthoCamera(r, span, size, size)
    back = OrthoCamera(r @ rotation_y(180.0), span, size, size)
    return front, back


def view_azimuths(n: int, offset: float = 0.0) -> np.ndarray:
    """``n`` evenly spaced azimuths in [0, 360)."""
    return (offset + 360.0 * np.arange(n) / n) % 360.0


# ---------------------------------------------------------------- images

@dataclass
class MultiChannelImage:
    """H x W image holding named float32 channel groups (each H x W x k)."""

    height: int
    width: int
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, a in list(self.channels.items()):
            self.channels[name] = self._check(name, a)

    def _check(self, name, a):
        a = np.asarray(a, dtype=np.float32)
        if a.ndim == 2:
            a = a[..., None]
        if a.shape[:2] != (self.height, self.width):
            raise RenderError(f"channel {name!r} has shape {a.shape[:2]}, expected {(self.height, self.width)}")
        return np.ascontiguousarray(a)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __setitem__(self, name: str, value) -> None:
        self.channels[name] = self._check(name, value)

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def flipped_horizontal(self) -> "MultiChannelImage":
        return MultiChannelImage(self.height, self.width,
                                 {k: v[:, ::-1].copy() for k, v in self.channels.items()})

    def subset(self, *names: str) -> "MultiChannelImage":
        return MultiChannelImage(self.height, self.width, {k: self.channels[k] for k in names})


def save_mci(path, image: MultiChannelImage) -> None:
    Path(path).write_bytes(encode_mci(image))


def encode_mci(image: MultiChannelImage) -> bytes:
    buf = io.BytesIO()
    total = sum(a.shape[2] for a in image.channels.values())
    buf.write(MCI_MAGIC)
    buf.write(struct.pack("<III", image.height, image.width, total))
    buf.write(struct.pack("<I", len(image.channels)))
    for name, a in image.channels.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", a.shape[2]))
    if image.channels:
        payload = np.concatenate(list(image.channels.values()), axis=2)
    else:
        payload = np.zeros((image.height, image.width, 0), dtype=np.float32)
    buf.write(payload.astype("<f4").tobytes())
    return buf.getvalue()


def load_mci(path) -> MultiChannelImage:
    return decode_mci(Path(path).read_bytes())


def decode_mci(data: bytes) -> MultiChannelImage:
    if data[:4] != MCI_MAGIC:
        raise RenderError("not an MCI1 tensor file")
    h, w, total = struct.unpack_from("<III", data, 4)
    (ng,) = struct.unpack_from("<I", data, 16)
    off = 20
    table = []
    for _ in range(ng):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + ln].decode("utf-8")
        off += ln
        (k,) = struct.unpack_from("<I", data, off)
        off += 4
        table.append((name, k))
    if sum(k for _, k in table) != total:
        raise RenderError("MCI1 channel table does not match channel count")
    payload = np.frombuffer(data, dtype="<f4", count=h * w * total, offset=off).reshape(h, w, total)
    chans, c0 = {}, 0
    for name, k in table:
        chans[name] = payload[:, :, c0:c0 + k].astype(np.float32)
        c0 += k
    return MultiChannelImage(h, w, chans)


def save_png(path, image: MultiChannelImage) -> None:
    """8-bit RGBA from the rgb and alpha channels (missing alpha = opaque)."""
    rgb = image["rgb"] if "rgb" in image else np.ones((image.height, image.width, 3), np.float32)
    alpha = image["alpha"] if "alpha" in image else np.ones((image.height, image.width, 1), np.float32)
    rgba = np.concatenate([rgb, alpha], axis=2)
    arr = np.clip(np.rint(rgba * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGBA").save(path, optimize=False)


def save_mask_png(path, mask) -> None:
    m = np.asarray(mask).reshape(np.shape(mask)[0], np.shape(mask)[1])
    Image.fromarray(((m > 0.5) * 255).astype(np.uint8), mode="L").save(path)


def load_png(path) -> MultiChannelImage:
    """rgb + alpha in [0, 1].  Grayscale files are read as masks (alpha = rgb = value)."""
    with Image.open(path) as im:
        if im.mode in ("L", "1"):
            a = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
            return MultiChannelImage(a.shape[0], a.shape[1],
                                     {"rgb": np.repeat(a[..., None], 3, axis=2), "alpha": a})
        arr = np.asarray(im.convert("RGBA"), dtype=np.float32) / 255.0
    return MultiChannelImage(arr.shape[0], arr.shape[1], {"rgb": arr[..., :3], "alpha": arr[..., 3:]})


# ---------------------------------------------------------------- rendering

def rasterize(camera: OrthoCamera, mesh: TriangleMesh, backend: str | None = None):
    """Visibility buffer: (face id or -1, depth, barycentric weights)."""
    u, v, z = project(camera, mesh.vertices)
    sv = np.ascontiguousarray(np.stack([u, v, z], axis=1))
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    k = kernels.get_backend(backend)
    return k.rasterize(sv, faces, camera.height, camera.width, kernels.num_threads())


def render(camera: OrthoCamera, mesh: TriangleMesh, channels, background=(1.0, 1.0, 1.0),
           backend: str | None = None) -> MultiChannelImage:
    channels = list(dict.fromkeys(channels))
    if not channels:
        raise RenderError("no channels requested")
    for c in channels:
        if c not in CHANNEL_WIDTH:
            raise RenderError(f"unknown channel {c!r}")
    if "rgb" in channels and mesh.colors is None:
        raise RenderError("channel 'rgb' needs vertex attribute 'colors'")
    if "uv" in channels and mesh.uvs is None:
        raise RenderError("channel 'uv' needs vertex attribute 'uvs'")

    fid, depth, bary = rasterize(camera, mesh, backend)
    cov = fid >= 0
    f = np.where(cov, fid, 0)
    corners = mesh.faces[f]

    def interp(attr):
        return np.einsum("hwk,hwkd->hwd", bary, attr[corners])

    out = {}
    for c in channels:
        if c == "alpha":
            out[c] = cov.astype(np.float32)
        elif c == "depth":
            out[c] = np.where(cov, depth, np.inf).astype(np.float32)
        elif c == "rgb":
            rgb = interp(mesh.colors)
            out[c] = np.where(cov[..., None], rgb, np.asarray(background, dtype=np.float64))
        elif c == "uv":
            out[c] = np.where(cov[..., None], interp(mesh.uvs), 0.0)
        elif c == "normal":
            if mesh.normals is not None:
                n = interp(mesh.normals)
            else:
                n = mesh.face_normals()[f]
            n = n @ camera.rotation.T
            n /= np.maximum(np.linalg.norm(n, axis=2, keepdims=True), 1e-300)
            n = np.where(n[..., 2:3] > 0.0, -n, n)
            n[..., 2] = -n[..., 2]
            out[c] = np.where(cov[..., None], n, 0.0)
    return MultiChannelImage(camera.height, camera.width, out)
