"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` take over.  Set
``MESHFIELD_KERNELS=python`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

from threadpoolctl import threadpool_limits

from . import _pykernels

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("MESHFIELD_KERNELS", "").lower() not in ("python", "numpy", "py"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        log.info("compiled kernels unavailable; using numpy fallback")

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

backend_name = "compiled" if _compiled is not None else "python"
_active = BACKENDS[backend_name]

_num_threads = os.cpu_count() or 1


def get_backend(name: str | None = None):
    return _active if name is None else BACKENDS[name]


def set_backend(name: str) -> None:
    global _active, backend_name
    _active = BACKENDS[name]
    backend_name = name


def set_num_threads(n: int | None) -> None:
    """Worker count for the parallel kernels and BLAS (results do not depend on it)."""
    global _num_threads
    _num_threads = max(1, int(n)) if n else (os.cpu_count() or 1)
    threadpool_limits(_num_threads)


def num_threads() -> int:
    return _num_threads
