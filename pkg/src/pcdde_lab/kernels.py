"""Backend selection for the interval kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise
the numpy implementation in ``_pykernels``. ``PCDDE_LAB_KERNELS=python``
forces the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

_backend = _pykernels
BACKEND = "python"

if os.environ.get("PCDDE_LAB_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _backend  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _backend = _pykernels


def get_backend(name: str | None = None):
    """Return a kernel module by name (``cython``/``python``) or the active one."""
    if name is None:
        return _backend
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def field_batch(*args):
    return _backend.field_batch(*args)


def interval_forward(*args):
    return _backend.interval_forward(*args)


def interval_adjoint(*args, **kwargs):
    return _backend.interval_adjoint(*args, **kwargs)
