"""Hot voxel-grid kernels with backend selection at import time.

The compiled Cython core is used when available; the numpy module is the
fallback and the reference for parity tests. Set EDGEFIELD_BACKEND=numpy (or
=cython) to force a backend; "cython" raises if the extension is missing.
"""
import os

from . import grid_numpy

_requested = os.environ.get("EDGEFIELD_BACKEND", "auto").lower()

_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _gridcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise
        _impl = None
if _impl is None:
    _impl = grid_numpy

BACKEND = _impl.BACKEND_NAME
grid_query = _impl.grid_query
grid_query_bwd = _impl.grid_query_bwd
grid_density_grad = _impl.grid_density_grad
grid_density_grad_bwd = _impl.grid_density_grad_bwd

softplus = grid_numpy.softplus
sigmoid = grid_numpy.sigmoid


def available_backends():
    """Names of importable kernel backends (for the benchmark and tests)."""
    names = ["numpy"]
    try:
        from . import _gridcore  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Fetch a specific backend module by name ('numpy' or 'cython')."""
    if name == "numpy":
        return grid_numpy
    if name == "cython":
        from . import _gridcore
        return _gridcore
    raise ValueError(f"unknown kernel backend {name!r}")
