"""Run configuration: nested dataclasses loaded from JSON with strict key checking."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .net.model import NetworkConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class DatagenConfig:
    scans_dir: str = "scans"
    bodies_dir: str = "bodies"
    out_dir: str = "dataset"
    n_views: int = 20
    elevation: float = 0.0
    image_size: int = 512
    span: float = 1.0
    n_samples: int = 40960
    shell_sigma: float = 0.05
    surface_fraction: float = 0.9
    normalize: bool = True
    sign_method: str = "auto"


@dataclass
class TrainConfig:
    dataset_dir: str = "dataset"
    checkpoint: str = "model.sith"
    resume: bool = False
    normal_steps: int = 300
    geometry_steps: int = 2000
    color_steps: int = 1000
    batch_points: int = 2048
    lr: float = 1e-3
    normal_lr: float = 1e-3
    normal_finetune_lr: float = 1e-5
    lambda_n: float = 0.1
    fd_step: float = 0.005
    normalize_fd_gradient: bool = True
    log_every: int = 50


@dataclass
class ReconConfig:
    front: str = "front.png"
    back: str = "mirror"  # a PNG path, or "mirror" for the flipped front view
    body: str = "body.ply"
    mask: str = ""  # empty: skip alignment
    joints: str = ""
    joint_regressor: str = ""  # JSON list of body-vertex index lists
    checkpoint: str = "model.sith"
    out_mesh: str = "recon.ply"
    report: str = "report.json"
    front_normal: str = ""  # empty: predict normals with the network
    back_normal: str = ""
    resolution: int = 256
    chunk_points: int = 65536
    adaptive: bool = True
    azimuth: float = 0.0
    elevation: float = 0.0
    span: float = 1.0
    align_iterations: int = 200
    align_restarts: int = 3
    align_resolution: int = 256
    align_silhouette_weight: float = 1.0
    align_joint_weight: float = 0.01


@dataclass
class EvalConfig:
    pred: str = "recon.ply"
    gt: str = "gt.ply"
    manifest: str = ""  # CSV of pred_path,gt_path rows; overrides pred/gt
    out: str = "metrics.json"
    n_points: int = 100000
    tau_cm: float = 1.0
    cm_per_unit: float = 100.0
    squared: bool = False
    icp_iterations: int = 100
    icp_tol: float = 1e-6
    icp_points: int = 20000


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 0  # 0: all logical cores
    no_body_embedding: bool = False
    no_normal_guidance: bool = False
    mirror_hallucination: bool = False
    network: NetworkConfig = field(default_factory=NetworkConfig)
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return _to_dict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _from_dict(cls, d, "")

    def resolved_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)


def _to_dict(obj):
    if is_dataclass(obj):
        if isinstance(obj, NetworkConfig):
            return obj.to_dict()
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    return obj


def _check_type(value, default, key):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple))
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key {key!r} expects {type(default).__name__}, got {type(value).__name__}", key)
    return value


def _from_dict(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {prefix or '<root>'!r} must be an object", prefix or None)
    names = {f.name: f for f in fields(cls)}
    for k in d:
        if k not in names:
            key = prefix + k
            raise ConfigError(f"unknown config key {key!r}", key)
    kwargs = {}
    defaults = cls()
    for name, f in names.items():
        if name not in d:
            continue
        key = prefix + name
        default = getattr(defaults, name)
        if is_dataclass(default):
            kwargs[name] = _from_dict(type(default), d[name], key + ".")
        else:
            kwargs[name] = _check_type(d[name], default, key)
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"invalid config section {prefix.rstrip('.') or '<root>'!r}: {e}", prefix or None) from None


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return RunConfig.from_dict(data)
