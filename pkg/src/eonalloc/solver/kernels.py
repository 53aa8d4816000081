"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

Set ``EONALLOC_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from types import ModuleType

import numpy as np

from . import _lse_py
from .problem import LseConstraints

log = logging.getLogger(__name__)


def _load_compiled() -> ModuleType | None:
    try:
        from . import _lse_kernels
    except ImportError:
        return None
    return _lse_kernels


COMPILED = _load_compiled()
_FORCE_PY = os.environ.get("EONALLOC_PURE_PYTHON", "").strip() not in ("", "0")
_ACTIVE = _lse_py if (COMPILED is None or _FORCE_PY) else COMPILED
BACKEND = "python" if _ACTIVE is _lse_py else "compiled"
log.debug("log-sum-exp kernels: %s", BACKEND)


def available_backends() -> dict[str, ModuleType]:
    out = {"python": _lse_py}
    if COMPILED is not None:
        out["compiled"] = COMPILED
    return out


@contextmanager
def use_backend(name: str):
    """Temporarily route every kernel call through backend ``name``."""
    global _ACTIVE, BACKEND
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"backend {name!r} unavailable (have {sorted(backends)})")
    saved = _ACTIVE, BACKEND
    _ACTIVE, BACKEND = backends[name], name
    try:
        yield backends[name]
    finally:
        _ACTIVE, BACKEND = saved


def _raw(cons: LseConstraints) -> tuple:
    raw = cons.__dict__.get("_raw")
    if raw is None:
        A = cons.A
        raw = (cons.term_ptr, np.ascontiguousarray(A.indptr, dtype=np.int32),
               np.ascontiguousarray(A.indices, dtype=np.int32), np.ascontiguousarray(A.data, dtype=np.float64),
               cons.g)
        object.__setattr__(cons, "_raw", raw)
    return raw


def lse_values(cons: LseConstraints, x: np.ndarray, backend: ModuleType | None = None) -> np.ndarray:
    return (backend or _ACTIVE).lse_values(*_raw(cons), np.ascontiguousarray(x, dtype=np.float64))


def lse_barrier(cons: LseConstraints, x: np.ndarray, shift: float = 0.0, backend: ModuleType | None = None):
    return (backend or _ACTIVE).lse_barrier(*_raw(cons), np.ascontiguousarray(x, dtype=np.float64), float(shift))
