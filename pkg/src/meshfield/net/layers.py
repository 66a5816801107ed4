"""Layers with explicit forward/backward passes.

Each layer registers its parameter shapes, runs ``forward(P, x)`` returning
``(y, cache)`` and ``backward(P, G, cache, dy)`` returning ``dx`` while
accumulating parameter gradients into ``G`` (a ParameterSet shaped like
``P``).  Everything is dtype-preserving so the same code runs the float32
training path and the float64 gradient-check shadow.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .params import ParameterSet

_trace: list | None = None


@contextmanager
def sign_trace():
    """Collect the sign pattern of every kink (activation, absolute value) evaluated inside."""
    global _trace
    prev, _trace = _trace, []
    try:
        yield _trace
    finally:
        _trace = prev


def note_signs(z) -> None:
    if _trace is not None:
        _trace.append(np.packbits(np.asarray(z) > 0).tobytes())


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def leaky_relu(x, slope):
    note_signs(x)
    s = x.dtype.type(slope)
    if 0 <= slope <= 1:
        return np.maximum(x, x * s)
    return np.where(x > 0, x, x * s)


def leaky_relu_grad(x, dy, slope):
    # a float gate is much faster than np.where on an unpredictable mask
    s = dy.dtype.type(slope)
    gate = (x > 0).astype(dy.dtype)
    gate *= 1 - s
    gate += s
    gate *= dy
    return gate


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _im2col(x, k: int, s: int, p: int, ho: int, wo: int) -> np.ndarray:
    """(n*ho*wo, k*k*c) patch matrix of an NHWC tensor, zero padded by ``p``."""
    n, _, _, c = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * c)


class Conv2d:
    """3x3 (or k x k) convolution over NHWC tensors with zero padding k // 2."""

    def __init__(self, name: str, cin: int, cout: int, k: int = 3, stride: int = 1):
        self.name, self.cin, self.cout, self.k, self.stride = name, cin, cout, k, stride
        self.pad = k // 2

    def shapes(self) -> dict:
        return {f"{self.name}.w": (self.k, self.k, self.cin, self.cout), f"{self.name}.b": (self.cout,)}

    def init(self, P: ParameterSet, rng):
        P[f"{self.name}.w"][...] = kaiming_uniform(rng, P[f"{self.name}.w"].shape, self.k * self.k * self.cin)
        P[f"{self.name}.b"][...] = 0.0

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        k, p, s = self.k, self.pad, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, P, x):
        n, h, w, c = x.shape
        if c != self.cin:
            raise ValueError(f"{self.name}: expected {self.cin} input channels, got {c}")
        k = self.k
        ho, wo = self.out_size(h, w)
        cols = _im2col(x, k, self.stride, self.pad, ho, wo)
        wmat = P[f"{self.name}.w"].reshape(k * k * c, self.cout).astype(x.dtype, copy=False)
        y = cols @ wmat + P[f"{self.name}.b"].astype(x.dtype, copy=False)
        return y.reshape(n, ho, wo, self.cout), (cols, x.shape)

    def backward(self, P, G, cache, dy, need_input_grad: bool = True):
        cols, xshape = cache
        n, h, w, c = xshape
        k, p, s = self.k, self.pad, self.stride
        ho, wo = dy.shape[1:3]
        dyf = dy.reshape(-1, self.cout)
        G[f"{self.name}.w"][...] += (cols.T @ dyf).reshape(k, k, c, self.cout)
        G[f"{self.name}.b"][...] += dyf.sum(axis=0)
        if not need_input_grad:
            return None
        if s == 1 and p == k // 2 and k % 2 == 1:
            # stride 1: the input gradient is a correlation with the flipped kernel
            wf = P[f"{self.name}.w"][::-1, ::-1].transpose(0, 1, 3, 2).astype(dy.dtype)
            dcols = _im2col(dy, k, 1, p, h, w)
            return (dcols @ wf.reshape(k * k * self.cout, c)).reshape(n, h, w, c)
        wmat = P[f"{self.name}.w"].reshape(k * k * c, self.cout).astype(dy.dtype, copy=False)
        dcols = (dyf @ wmat.T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p:p + h, p:p + w, :]


class Linear:
    def __init__(self, name: str, din: int, dout: int):
        self.name, self.din, self.dout = name, din, dout

    def shapes(self) -> dict:
        return {f"{self.name}.w": (self.din, self.dout), f"{self.name}.b": (self.dout,)}

    def init(self, P: ParameterSet, rng):
        P[f"{self.name}.w"][...] = kaiming_uniform(rng, (self.din, self.dout), self.din)
        P[f"{self.name}.b"][...] = 0.0

    def forward(self, P, x):
        w = P[f"{self.name}.w"].astype(x.dtype, copy=False)
        return x @ w + P[f"{self.name}.b"].astype(x.dtype, copy=False), x

    def backward(self, P, G, x, dy):
        G[f"{self.name}.w"][...] += x.T @ dy
        G[f"{self.name}.b"][...] += dy.sum(axis=0)
        return dy @ P[f"{self.name}.w"].astype(dy.dtype, copy=False).T


class ConvEncoder:
    """Strided conv stack mapping an image to a D-channel feature map.

    Leaky ReLU after every layer but the last.
    """

    def __init__(self, name: str, cin: int, channels, strides, out_dim: int, slope: float):
        dims = [cin, *channels, out_dim]
        self.layers = [Conv2d(f"{name}.conv{i}", dims[i], dims[i + 1], 3, strides[i])
                       for i in range(len(dims) - 1)]
        self.slope = slope
        self.stride = int(np.prod(strides))
        self.out_dim = out_dim

    def shapes(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.shapes())
        return out

    def init(self, P, rng):
        for layer in self.layers:
            layer.init(P, rng)

    def forward(self, P, x):
        caches = []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, c = layer.forward(P, h)
            caches.append((c, z))
            h = leaky_relu(z, self.slope) if i < last else z
        return h, caches

    def backward(self, P, G, caches, dy, need_input_grad: bool = True):
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            c, z = caches[i]
            if i < last:
                dy = leaky_relu_grad(z, dy, self.slope)
            dy = self.layers[i].backward(P, G, c, dy, need_input_grad or i > 0)
        return dy


class IdentityEncoder:
    """Parameter-free encoder: the input channels tiled out to D features, stride 1."""

    def __init__(self, name: str, cin: int, out_dim: int):
        self.name, self.cin, self.out_dim, self.stride = name, cin, out_dim, 1
        self.reps = -(-out_dim // cin)

    def shapes(self) -> dict:
        return {}

    def init(self, P, rng):
        pass

    def forward(self, P, x):
        return np.tile(x, (1, 1, 1, self.reps))[..., :self.out_dim], x.shape

    def backward(self, P, G, cache, dy, need_input_grad: bool = True):
        n, h, w, c = cache
        pad = self.reps * c - self.out_dim
        if pad:
            dy = np.concatenate([dy, np.zeros(dy.shape[:3] + (pad,), dtype=dy.dtype)], axis=3)
        return dy.reshape(n, h, w, self.reps, c).sum(axis=3)


class NormalNet:
    """Fully convolutional image-to-normal predictor; outputs unit vectors per pixel."""

    def __init__(self, name: str, cin: int, width: int, n_layers: int, slope: float):
        dims = [cin] + [width] * (n_layers - 1) + [3]
        self.layers = [Conv2d(f"{name}.conv{i}", dims[i], dims[i + 1], 3, 1) for i in range(n_layers)]
        self.slope = slope

    def shapes(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.shapes())
        return out

    def init(self, P, rng):
        for layer in self.layers:
            layer.init(P, rng)

    def forward(self, P, x):
        caches = []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, c = layer.forward(P, h)
            caches.append((c, z))
            h = leaky_relu(z, self.slope) if i < last else z
        norm = np.sqrt((h * h).sum(axis=3, keepdims=True) + h.dtype.type(1e-12))
        return h / norm, (caches, h, norm)

    def backward(self, P, G, cache, dy, need_input_grad: bool = True):
        caches, h, norm = cache
        n = h / norm
        dy = (dy - n * (dy * n).sum(axis=3, keepdims=True)) / norm
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            c, z = caches[i]
            if i < last:
                dy = leaky_relu_grad(z, dy, self.slope)
            dy = self.layers[i].backward(P, G, c, dy, need_input_grad or i > 0)
        return dy


class SkipMLP:
    """Leaky-ReLU MLP whose listed hidden layers (1-based) also see the raw input."""

    def __init__(self, name: str, din: int, width: int, n_layers: int, skips, dout: int,
                 slope: float, out_act: str | None = None, final_bias: float = 0.0):
        self.din, self.width, self.skips = din, width, tuple(skips)
        for s in self.skips:
            if not 2 <= s <= n_layers:
                raise ValueError(f"skip index {s} outside 2..{n_layers}")
        self.layers = []
        for l in range(1, n_layers + 1):
            fan = din if l == 1 else width + (din if l in self.skips else 0)
            self.layers.append(Linear(f"{name}.fc{l}", fan, width))
        self.out = Linear(f"{name}.out", width, dout)
        self.slope, self.out_act, self.final_bias = slope, out_act, final_bias

    def shapes(self) -> dict:
        out = {}
        for layer in self.layers + [self.out]:
            out.update(layer.shapes())
        return out

    def init(self, P, rng):
        for layer in self.layers + [self.out]:
            layer.init(P, rng)
        P[f"{self.out.name}.b"][...] = self.final_bias

    def forward(self, P, x):
        if x.shape[1] != self.din:
            raise ValueError(f"MLP expects {self.din} inputs, got {x.shape[1]}")
        caches = []
        h = x
        for l, layer in enumerate(self.layers, start=1):
            inp = np.concatenate([h, x], axis=1) if l in self.skips else h
            z, c = layer.forward(P, inp)
            caches.append((c, z))
            h = leaky_relu(z, self.slope)
        y, c = self.out.forward(P, h)
        if self.out_act == "sigmoid":
            y = sigmoid(y)
        return y, (caches, c, y)

    def backward(self, P, G, cache, dy):
        caches, cout, y = cache
        if self.out_act == "sigmoid":
            dy = dy * y * (1.0 - y)
        dh = self.out.backward(P, G, cout, dy)
        dx = None
        for l in range(len(self.layers), 0, -1):
            c, z = caches[l - 1]
            dz = leaky_relu_grad(z, dh, self.slope)
            dinp = self.layers[l - 1].backward(P, G, c, dz)
            if l in self.skips:
                dh, dskip = dinp[:, :self.width], dinp[:, self.width:]
                dx = dskip if dx is None else dx + dskip
            else:
                dh = dinp
        return dh if dx is None else dx + dh
