"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise (or when
``VICSFM_PURE_PYTHON=1`` is set) the numpy fallback is used.  Both expose the
same four functions with identical semantics.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load() -> tuple[ModuleType, str]:
    if os.environ.get("VICSFM_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels, "python"
    return _ckernels, "cython"


_impl, BACKEND = _load()


def get_backend(name: str | None = None) -> ModuleType:
    """Kernel module by name ('cython' or 'python'); None gives the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return names
    return ["cython", *names]


def refine_extrema(*args, **kwargs):
    return _impl.refine_extrema(*args, **kwargs)


def orientation_histograms(*args, **kwargs):
    return _impl.orientation_histograms(*args, **kwargs)


def descriptors(*args, **kwargs):
    return _impl.descriptors(*args, **kwargs)


def segments_occluded(*args, **kwargs):
    return _impl.segments_occluded(*args, **kwargs)
