"""The four CLI stages on a small synthetic subject, with digests of every output.

Paths are relative to the working directory so that two runs in different
directories write byte-identical files.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from meshfield.cli import main
from meshfield.meshio import load_mesh, save_mesh
from meshfield.raster import make_view_pair, project
from meshfield.synthetic import make_humanoid, regress_joints

from gradcases import SMALL


def digest(path: Path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for p in files:
        h.update(str(p.relative_to(path) if path.is_dir() else p.name).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_config(root: Path, seed: int) -> Path:
    cfg = {
        "seed": seed,
        "network": SMALL.to_dict(),
        "datagen": {"scans_dir": "in/scans", "bodies_dir": "in/bodies", "out_dir": "dataset",
                    "n_views": 2, "image_size": 32, "n_samples": 512},
        "train": {"dataset_dir": "dataset", "checkpoint": "model.sith", "normal_steps": 2,
                  "geometry_steps": 4, "color_steps": 2, "batch_points": 32, "log_every": 0},
        "recon": {"front": "dataset/views/h/000/front.png", "back": "mirror", "body": "dataset/bodies/h.ply",
                  "mask": "dataset/views/h/000/mask.png", "joints": "joints.json",
                  "joint_regressor": "regressor.json", "checkpoint": "model.sith", "out_mesh": "recon.ply",
                  "report": "report.json", "resolution": 24, "align_iterations": 20, "align_restarts": 2,
                  "align_resolution": 32},
        "eval": {"pred": "recon.ply", "gt": "dataset/scans/h.ply", "out": "metrics.json", "n_points": 2000,
                 "icp_points": 1000},
    }
    p = root / "config.json"
    p.write_text(json.dumps(cfg, indent=1))
    return p


def run_pipeline(root: Path, workers: int, seed: int = 0, humanoid=None) -> dict:
    """Run datagen, train, reconstruct and eval through the CLI in ``root``; return output digests."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h = humanoid or make_humanoid(32)
    (root / "in" / "scans").mkdir(parents=True, exist_ok=True)
    (root / "in" / "bodies").mkdir(parents=True, exist_ok=True)
    save_mesh(root / "in" / "scans" / "h.ply", h.scan)
    save_mesh(root / "in" / "bodies" / "h.ply", h.body)
    (root / "regressor.json").write_text(json.dumps(h.joint_regressor))
    write_config(root, seed)
    old = os.getcwd()
    os.chdir(root)
    try:
        common = ["--config", "config.json", "--workers", str(workers)]
        codes = {"datagen": main(["datagen"] + common)}
        body = load_mesh("dataset/bodies/h.ply")
        front, _ = make_view_pair(0.0, 0.0, 1.0, 32)
        u, v, _ = project(front, regress_joints(body, h.joint_regressor))
        Path("joints.json").write_text(json.dumps(np.stack([u, v, np.ones_like(u)], 1).tolist()))
        for cmd in ("train", "reconstruct", "eval"):
            codes[cmd] = main([cmd] + common)
    finally:
        os.chdir(old)
    return {
        "codes": codes,
        "datagen": digest(root / "dataset"),
        "train": digest(root / "model.sith"),
        "reconstruct": digest(root / "recon.ply"),
        "eval": digest(root / "metrics.json"),
    }
