from __future__ import annotations

from collections import OrderedDict

import numpy as np


class ParameterSet:
    """One flat vector holding every trainable array, addressed by name.

    ``layout`` maps a layer name to ``(offset, shape)`` inside ``flat``;
    ``ps[name]`` is a writable view.
    """

    def __init__(self, shapes: dict, dtype=np.float32, flat: np.ndarray | None = None):
        self.layout: "OrderedDict[str, tuple[int, tuple]]" = OrderedDict()
        off = 0
        for name, shape in shapes.items():
            shape = tuple(int(s) for s in shape)
            self.layout[name] = (off, shape)
            off += int(np.prod(shape))
        if flat is None:
            flat = np.zeros(off, dtype=dtype)
        elif flat.shape != (off,):
            raise ValueError(f"flat vector has {flat.size} entries, layout needs {off}")
        self.flat = flat

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def dtype(self):
        return self.flat.dtype

    def shapes(self) -> dict:
        return {k: s for k, (_, s) in self.layout.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        return self.flat[off:off + int(np.prod(shape))].reshape(shape)

    def __contains__(self, name: str) -> bool:
        return name in self.layout

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self.layout if k.startswith(prefix)]

    def slice_of(self, name: str) -> slice:
        off, shape = self.layout[name]
        return slice(off, off + int(np.prod(shape)))

    def mask(self, prefixes) -> np.ndarray:
        """Boolean mask over ``flat`` selecting every layer whose name starts with a prefix."""
        m = np.zeros(self.size, dtype=bool)
        for name in self.layout:
            if any(name.startswith(p) for p in prefixes):
                m[self.slice_of(name)] = True
        return m

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(self.shapes(), flat=np.zeros_like(self.flat))

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.shapes(), flat=self.flat.copy())

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(self.shapes(), flat=self.flat.astype(dtype))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())
