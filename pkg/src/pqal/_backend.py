"""Selects the compiled kernel core or the numpy fallback at import.

Set ``PQAL_PURE_PYTHON=1`` to force the fallback. ``NAME`` records the
active backend ("compiled" or "python").
"""

import os

import numpy as np

from . import _kernels_py

_FORCE_PY = os.environ.get("PQAL_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _FORCE_PY:
        raise ImportError("fallback forced by PQAL_PURE_PYTHON")
    from . import _kernels_c as _impl

    NAME = "compiled"
except ImportError:
    _impl = _kernels_py
    NAME = "python"


# Above this covariate dimension scipy's BLAS-backed distances beat the
# compiled loops (see benchmarks/bench_kernels.py), so the dispatcher defers.
COMPILED_MAX_DIM = 16


def _c(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def _for_dim(arr, impl):
    if impl is not None:
        return impl
    return _kernels_py if arr.shape[1] > COMPILED_MAX_DIM else _impl


def rbf_cross_gram(a, b, lengthscale, impl=None):
    a, b = _c(a), _c(b)
    return _for_dim(a, impl).rbf_cross_gram(a, b, float(lengthscale))


def rbf_gram(a, lengthscale, impl=None):
    a = _c(a)
    return _for_dim(a, impl).rbf_gram(a, float(lengthscale))


def delta_cross_gram(a, b, impl=None):
    # equality tests vectorize well in numpy; the compiled loop is no faster
    return (impl or _kernels_py).delta_cross_gram(_c(a), _c(b))


def khatri_rao_columnwise(a, b, impl=None):
    return (impl or _impl).khatri_rao_columnwise(_c(a), _c(b))


def face_splitting(a, b, impl=None):
    return (impl or _impl).face_splitting(_c(a), _c(b))


def pairwise_distances(a, impl=None):
    return (impl or _impl).pairwise_distances(_c(a))


def implementations():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels_c

        found["compiled"] = _kernels_c
    except ImportError:
        pass
    return found
