"""Backend selection for the hot kernels.

The compiled extension ``invlearn._core`` is used when importable; setting
the environment variable ``INVLEARN_PURE_PYTHON=1`` forces the pure-Python
implementation in :mod:`invlearn._fallback`.
"""
import os

from . import _fallback

_FORCE_PYTHON = os.environ.get("INVLEARN_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not _FORCE_PYTHON:
    _impl = _compiled
    BACKEND = "compiled"
else:
    _impl = _fallback
    BACKEND = "python"


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.append("compiled")
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled backend is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def jacobi_eigh(m, tol, max_sweeps):
    return _impl.jacobi_eigh(m, tol, max_sweeps)


def prox_power(v, tau, p, tol, max_iter):
    return _impl.prox_power(v, tau, p, tol, max_iter)
