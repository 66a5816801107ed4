"""Single-image reconstruction: back view, body alignment, field evaluation, meshing."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import kernels
from ..embed import BodyPrior
from ..mesh import TriangleMesh
from ..meshio import load_mesh, save_mesh
from ..net.checkpoint import load_checkpoint
from ..net.model import FieldModel
from ..raster import MultiChannelImage, OrthoCamera, load_mci, load_png, make_view_pair
from .align import AlignmentResult, align_body, parse_joints
from .field import FieldEvaluator, evaluate_field
from .mcubes import marching_cubes

log = logging.getLogger("meshfield.recon")


def mirror_hallucinate(front: MultiChannelImage) -> MultiChannelImage:
    """Back-view stand-in: the front view's color and alpha flipped left to right."""
    for c in ("rgb", "alpha"):
        if c not in front:
            raise ValueError(f"front image has no {c!r} channel")
    return front.subset("rgb", "alpha").flipped_horizontal()


def _stack(front: MultiChannelImage, back: MultiChannelImage, channel: str) -> np.ndarray:
    if (front.height, front.width) != (back.height, back.width):
        raise ValueError("front and back images differ in size")
    return np.stack([front[channel], back[channel]]).astype(np.float32)


def reconstruct(front: MultiChannelImage, back, body: TriangleMesh | None, model: FieldModel, params,
                cameras: tuple[OrthoCamera, OrthoCamera] | None = None, resolution: int = 256,
                mask=None, joints=None, joint_regressor=None, normals=None,
                no_body_embedding: bool = False, no_normal_guidance: bool = False,
                adaptive: bool = True, chunk: int = 65536, align_options: dict | None = None,
                seed: int = 0) -> tuple[TriangleMesh, dict]:
    """Colored mesh of the subject in ``front`` plus a report.

    ``back`` is an image or the string ``"mirror"``.  The body is aligned to
    ``mask``/``joints`` when both are given; otherwise it is used as is and
    the report says so.  ``normals``, a (front, back) pair of images with a
    ``normal`` channel, replaces the predicted normals.
    """
    t0 = time.perf_counter()
    timings = {}
    report: dict = {"resolution": int(resolution)}
    if isinstance(back, str):
        if back != "mirror":
            raise ValueError(f"unknown back-view provider {back!r}")
        back = mirror_hallucinate(front)
        report["back_view"] = "mirror"
    else:
        report["back_view"] = "image"
    if cameras is None:
        cameras = make_view_pair(0.0, 0.0, 1.0, front.height)
    cameras = tuple(c.with_size(front.height, front.width) for c in cameras)

    if body is not None and not no_body_embedding and mask is not None and joints is not None:
        t = time.perf_counter()
        opts = dict(align_options or {})
        opts.setdefault("seed", seed)
        res: AlignmentResult = align_body(body, mask, joints, cameras[0], joint_regressor, **opts)
        body = res.apply(body)
        report["alignment"] = res.to_dict()
        timings["align"] = time.perf_counter() - t
    else:
        report["alignment"] = None
        report["alignment_skipped"] = ("body embedding disabled" if no_body_embedding or body is None
                                       else "no mask/joints given")

    t = time.perf_counter()
    rgb = _stack(front, back, "rgb")
    alpha = _stack(front, back, "alpha")
    normal_in = None
    if normals is not None and not no_normal_guidance:
        normal_in = _stack(normals[0], normals[1], "normal")
        report["normals"] = "loaded"
    else:
        report["normals"] = "off" if no_normal_guidance else "predicted"
    prior = None if no_body_embedding or body is None else BodyPrior(body)
    ev = FieldEvaluator(model, params, rgb, alpha, cameras, prior, normal_in, no_normal_guidance)
    timings["encode"] = time.perf_counter() - t

    t = time.perf_counter()
    stats: dict = {}
    grid = evaluate_field(ev, resolution, adaptive=adaptive, chunk=chunk, stats=stats)
    timings["field"] = time.perf_counter() - t
    report.update(stats)

    t = time.perf_counter()
    mesh = marching_cubes(grid)
    timings["marching_cubes"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    report["timings"] = timings
    report["n_vertices"] = mesh.n_vertices
    report["n_faces"] = mesh.n_faces
    return mesh, report


def _load_front(path) -> MultiChannelImage:
    img = load_png(path)
    if "alpha" not in img:
        raise ValueError(f"{str(path)!r} has no alpha channel; save the foreground as RGBA")
    return img


def run_reconstruct(cfg) -> dict:
    """Load the inputs named by ``cfg.recon``, reconstruct and write mesh plus report."""
    rc = cfg.recon
    kernels.set_num_threads(cfg.resolved_workers())
    config, params = load_checkpoint(rc.checkpoint, expected=cfg.network)
    model = FieldModel(config)
    front = _load_front(rc.front)
    back = "mirror" if cfg.mirror_hallucination or rc.back == "mirror" else _load_front(rc.back)
    body = None if cfg.no_body_embedding else load_mesh(rc.body)
    mask = joints = reg = None
    if rc.mask and rc.joints:
        m = load_png(rc.mask)
        mask = m["alpha"] if "alpha" in m else m["rgb"][..., :1]
        joints = parse_joints(json.loads(Path(rc.joints).read_text()))
        if not rc.joint_regressor:
            raise ValueError("recon.joint_regressor is required when joints are given")
        reg = json.loads(Path(rc.joint_regressor).read_text())
    normals = None
    if rc.front_normal:
        if not rc.back_normal:
            raise ValueError("recon.front_normal needs recon.back_normal too")
        normals = (load_mci(rc.front_normal), load_mci(rc.back_normal))
    cams = make_view_pair(rc.azimuth, rc.elevation, rc.span, front.height)
    mesh, report = reconstruct(
        front, back, body, model, params, cams, rc.resolution, mask, joints, reg, normals,
        cfg.no_body_embedding, cfg.no_normal_guidance, rc.adaptive, rc.chunk_points,
        {"iterations": rc.align_iterations, "restarts": rc.align_restarts,
         "resolution": rc.align_resolution, "w_s": rc.align_silhouette_weight,
         "w_j": rc.align_joint_weight}, cfg.seed)
    Path(rc.out_mesh).parent.mkdir(parents=True, exist_ok=True)
    save_mesh(rc.out_mesh, mesh)
    report["mesh"] = str(rc.out_mesh)
    report["mesh_sha256"] = hashlib.sha256(Path(rc.out_mesh).read_bytes()).hexdigest()
    report["checkpoint_sha256"] = hashlib.sha256(Path(rc.checkpoint).read_bytes()).hexdigest()
    report["seed"] = cfg.seed
    Path(rc.report).parent.mkdir(parents=True, exist_ok=True)
    Path(rc.report).write_text(json.dumps(report, indent=1, sort_keys=True))
    log.info("reconstructed %d faces in %.1f s", mesh.n_faces, report["timings"]["total"])
    return report
