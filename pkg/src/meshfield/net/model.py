"""The implicit field network: normal predictor, two image encoders, two MLP heads.

Geometry branch: predicted normal images -> G_d -> feature maps; the SDF head
reads front and back features at a point's projections plus its body
embedding.  Color branch: RGB images -> G_r -> feature maps -> RGB head.
Front and back images always travel together as a batch of two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..embed import EMBED_DIM, FeatureMap, bilinear_matrix
from ..raster import MultiChannelImage, OrthoCamera, project
from .layers import ConvEncoder, IdentityEncoder, NormalNet, SkipMLP
from .params import ParameterSet

HEADS = ("geometry", "color")


@dataclass(frozen=True)
class NetworkConfig:
    feature_dim: int = 32
    encoder: str = "conv"  # "conv" or "identity"
    encoder_channels: tuple = (16, 32, 32)
    encoder_strides: tuple = (2, 2, 1, 1)
    image_channels: int = 3
    geometry_width: int = 512
    geometry_layers: int = 5
    geometry_skips: tuple = (3, 4, 5)
    color_width: int = 256
    color_layers: int = 4
    color_skips: tuple = (3, 4)
    normal_width: int = 16
    normal_layers: int = 3
    leaky_slope: float = 0.01
    geometry_final_bias: float = 0.1
    embed_dim: int = EMBED_DIM

    def __post_init__(self):
        for k in ("encoder_channels", "encoder_strides", "geometry_skips", "color_skips"):
            object.__setattr__(self, k, tuple(int(v) for v in getattr(self, k)))
        for k in ("feature_dim", "image_channels", "geometry_width", "geometry_layers",
                  "color_width", "color_layers", "normal_width", "embed_dim"):
            if int(getattr(self, k)) < 1:
                raise ValueError(f"{k} must be positive")
        if self.normal_layers < 2:
            raise ValueError("normal_layers must be at least 2")
        if self.encoder not in ("conv", "identity"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.encoder == "conv":
            if len(self.encoder_strides) != len(self.encoder_channels) + 1:
                raise ValueError("encoder_strides needs one entry per conv layer")
            if any(s < 1 for s in self.encoder_strides) or any(c < 1 for c in self.encoder_channels):
                raise ValueError("encoder channels and strides must be positive")
        for skips, n in ((self.geometry_skips, self.geometry_layers), (self.color_skips, self.color_layers)):
            if any(not 2 <= s <= n for s in skips):
                raise ValueError(f"skip indices {skips} must lie in 2..{n}")

    @property
    def mlp_input_dim(self) -> int:
        return 2 * self.feature_dim + self.embed_dim

    @property
    def stride(self) -> int:
        return int(np.prod(self.encoder_strides)) if self.encoder == "conv" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def to_json(self) -> str:
        """Canonical form: sorted keys, no whitespace."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown network config key {unknown[0]!r}")
        return cls(**d)


def _feature_map_size(cfg: NetworkConfig, h: int, w: int) -> tuple[int, int]:
    if cfg.encoder == "identity":
        return h, w
    for s in cfg.encoder_strides:
        h, w = (h + 2 - 3) // s + 1, (w + 2 - 3) // s + 1
    return h, w


@dataclass
class PairFeatures:
    """Feature maps of a front/back pair for one branch, with the encoder cache."""

    maps: np.ndarray  # (2, H', W', D)
    cameras: tuple
    cache: object = field(default=None, repr=False)

    def feature_map(self, k: int) -> FeatureMap:
        return FeatureMap(self.maps[k], self.cameras[k])


class FieldModel:
    def __init__(self, config: NetworkConfig | None = None):
        self.config = cfg = config or NetworkConfig()
        d = cfg.feature_dim
        if cfg.encoder == "conv":
            self.geo_enc = ConvEncoder("geo_enc", cfg.image_channels, cfg.encoder_channels,
                                       cfg.encoder_strides, d, cfg.leaky_slope)
            self.color_enc = ConvEncoder("color_enc", cfg.image_channels, cfg.encoder_channels,
                                         cfg.encoder_strides, d, cfg.leaky_slope)
        else:
            self.geo_enc = IdentityEncoder("geo_enc", cfg.image_channels, d)
            self.color_enc = IdentityEncoder("color_enc", cfg.image_channels, d)
        self.normal = NormalNet("normal", cfg.image_channels, cfg.normal_width, cfg.normal_layers,
                                cfg.leaky_slope)
        self.geo_mlp = SkipMLP("geo_mlp", cfg.mlp_input_dim, cfg.geometry_width, cfg.geometry_layers,
                               cfg.geometry_skips, 1, cfg.leaky_slope, None, cfg.geometry_final_bias)
        self.color_mlp = SkipMLP("color_mlp", cfg.mlp_input_dim, cfg.color_width, cfg.color_layers,
                                 cfg.color_skips, 3, cfg.leaky_slope, "sigmoid", 0.0)
        self.parts = [self.normal, self.geo_enc, self.color_enc, self.geo_mlp, self.color_mlp]

    def shapes(self) -> dict:
        out = {}
        for part in self.parts:
            out.update(part.shapes())
        return out

    def new_params(self, dtype=np.float32) -> ParameterSet:
        return ParameterSet(self.shapes(), dtype=dtype)

    def init_params(self, seed: int = 0) -> ParameterSet:
        """Kaiming-uniform weights, zero biases (geometry output bias set separately)."""
        rng = np.random.default_rng(seed)
        P = self.new_params(np.float64)
        for part in self.parts:
            part.init(P, rng)
        return P.astype(np.float32)

    # -- images ----------------------------------------------------------

    def _check_images(self, x):
        if x.ndim != 4 or x.shape[3] != self.config.image_channels:
            raise ValueError(f"expected (n, H, W, {self.config.image_channels}) images, got {x.shape}")

    def predict_normals(self, P, images):
        """(n, H, W, 3) images -> unit normals, plus backward cache."""
        self._check_images(images)
        return self.normal.forward(P, images)

    def normals_backward(self, P, G, cache, dy, need_input_grad: bool = False):
        return self.normal.backward(P, G, cache, dy, need_input_grad)

    def encoder(self, head: str):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        return self.geo_enc if head == "geometry" else self.color_enc

    def mlp(self, head: str):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        return self.geo_mlp if head == "geometry" else self.color_mlp

    def encode(self, P, head: str, images, cameras) -> PairFeatures:
        """Run the branch encoder on stacked (2, H, W, C) front/back inputs."""
        self._check_images(images)
        maps, cache = self.encoder(head).forward(P, images)
        return PairFeatures(maps, tuple(cameras), cache)

    def encode_backward(self, P, G, head: str, feats: PairFeatures, dmaps, need_input_grad: bool = True):
        return self.encoder(head).backward(P, G, feats.cache, dmaps, need_input_grad)

    # -- points ----------------------------------------------------------

    def query_operators(self, feats: PairFeatures, x, dtype) -> list:
        """Sparse bilinear operators mapping each feature map to the points' projections."""
        _, hf, wf, _ = feats.maps.shape
        ops = []
        for k, cam in enumerate(feats.cameras):
            u, v, _ = project(cam, x)
            fm = FeatureMap(feats.maps[k], cam)
            fu, fv = fm.texel_coords(u, v)
            ops.append(bilinear_matrix(fu, fv, hf, wf).astype(dtype))
        return ops

    def head_forward(self, P, head: str, feats: PairFeatures, x, p, ops=None):
        """Evaluate a head at points ``x`` with embeddings ``p``.

        Returns (n,) SDF values or (n, 3) colors, and a cache for backward.
        """
        dtype = feats.maps.dtype
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        p = np.asarray(p).reshape(len(x), -1)
        if p.shape[1] != self.config.embed_dim:
            raise ValueError(f"embedding has {p.shape[1]} entries, expected {self.config.embed_dim}")
        if ops is None:
            ops = self.query_operators(feats, x, dtype)
        d = self.config.feature_dim
        f = [ops[k] @ feats.maps[k].reshape(-1, d) for k in range(2)]
        inp = np.concatenate([f[0], f[1], p.astype(dtype)], axis=1)
        y, cache = self.mlp(head).forward(P, inp)
        if head == "geometry":
            y = y[:, 0]
        return y, (ops, cache)

    def head_backward(self, P, G, head: str, feats: PairFeatures, cache, dy):
        """Backpropagate into the head parameters; returns d(loss)/d(feature maps)."""
        ops, mcache = cache
        if head == "geometry":
            dy = dy.reshape(-1, 1)
        dinp = self.mlp(head).backward(P, G, mcache, dy)
        d = self.config.feature_dim
        _, hf, wf, _ = feats.maps.shape
        dmaps = np.stack([(ops[k].T @ dinp[:, k * d:(k + 1) * d]).reshape(hf, wf, d) for k in range(2)])
        return dmaps.astype(feats.maps.dtype, copy=False)


# ---------------------------------------------------------------- functional API

def _stack_pair(images) -> np.ndarray:
    return np.stack([np.asarray(im, dtype=np.float32) for im in images])


def encoder_forward(model: FieldModel, params: ParameterSet, image: MultiChannelImage,
                    camera: OrthoCamera, head: str = "geometry", channel: str = "rgb") -> FeatureMap:
    """Feature map of a single image for one branch."""
    if channel not in image:
        raise ValueError(f"image has no {channel!r} channel")
    x = image[channel][None]
    maps, _ = model.encoder(head).forward(params, x)
    return FeatureMap(maps[0], camera)


def mlp_forward(model: FieldModel, params: ParameterSet, head: str, inputs) -> np.ndarray:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=params.dtype))
    if inputs.shape[1] != model.config.mlp_input_dim:
        raise ValueError(f"{head} head expects {model.config.mlp_input_dim} inputs, got {inputs.shape[1]}")
    y, _ = model.mlp(head).forward(params, inputs)
    return y[:, 0] if head == "geometry" else y


def normal_forward(model: FieldModel, params: ParameterSet, image: MultiChannelImage) -> MultiChannelImage:
    n, _ = model.predict_normals(params, image["rgb"][None])
    return MultiChannelImage(image.height, image.width, {"normal": n[0]})


def feature_map_size(config: NetworkConfig, height: int, width: int) -> tuple[int, int]:
    return _feature_map_size(config, height, width)
