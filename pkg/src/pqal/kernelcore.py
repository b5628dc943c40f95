"""Kernel functions and the dense linear algebra built on them.

Points are passed as ``(n, d)`` arrays; a 1-D array is read as ``n``
scalar points. Gram assembly runs through the compiled core when it is
available (see ``pqal._backend``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import _backend
from .errors import InputError, NumericalError

GAUSSIAN_RBF = "gaussian-rbf"
KRONECKER_DELTA = "kronecker-delta"
FIXED = "fixed"
MEDIAN_HEURISTIC = "median-heuristic"


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its bandwidth.

    ``lengthscale`` is ignored for the delta kernel. With
    ``bandwidth_rule="median-heuristic"`` the lengthscale is a placeholder
    until :meth:`resolve` replaces it with the median pairwise distance of a
    fitting set.
    """

    kind: str = GAUSSIAN_RBF
    lengthscale: float = 1.0
    bandwidth_rule: str = FIXED

    def __post_init__(self):
        if self.kind not in (GAUSSIAN_RBF, KRONECKER_DELTA):
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth_rule not in (FIXED, MEDIAN_HEURISTIC):
            raise InputError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.kind == GAUSSIAN_RBF and not (self.lengthscale > 0):
            raise InputError(f"rbf lengthscale must be positive, got {self.lengthscale}")

    @classmethod
    def rbf(cls, lengthscale=1.0):
        return cls(GAUSSIAN_RBF, float(lengthscale), FIXED)

    @classmethod
    def rbf_median(cls):
        return cls(GAUSSIAN_RBF, 1.0, MEDIAN_HEURISTIC)

    @classmethod
    def delta(cls):
        return cls(KRONECKER_DELTA, 1.0, FIXED)

    @property
    def is_resolved(self):
        return self.kind == KRONECKER_DELTA or self.bandwidth_rule == FIXED

    def resolve(self, points) -> KernelSpec:
        """Fix the bandwidth from ``points`` if the rule asks for it."""
        if self.is_resolved:
            return self
        return replace(self, lengthscale=median_heuristic(points), bandwidth_rule=FIXED)

    def to_dict(self):
        return {"kind": self.kind, "lengthscale": self.lengthscale,
                "bandwidth_rule": self.bandwidth_rule}


@dataclass(frozen=True)
class KernelSet:
    """Kernels for covariates, environments and proxies."""

    x: KernelSpec = KernelSpec.rbf_median()
    z: KernelSpec = KernelSpec.delta()
    w: KernelSpec = KernelSpec.rbf_median()

    def resolve(self, samples) -> KernelSet:
        """Resolve median-heuristic bandwidths on a proxy-bearing sample set."""
        x = self.x.resolve(samples.x)
        z = self.z.resolve(samples.z[:, None].astype(float))
        w = self.w
        if not w.is_resolved:
            if samples.w is None:
                raise InputError("cannot resolve the proxy kernel on samples without proxies")
            w = w.resolve(samples.w)
        return KernelSet(x, z, w)

    @property
    def is_resolved(self):
        return self.x.is_resolved and self.z.is_resolved and self.w.is_resolved

    def to_dict(self):
        return {"x": self.x.to_dict(), "z": self.z.to_dict(), "w": self.w.to_dict()}


def as_points(points) -> np.ndarray:
    """Coerce to a float ``(n, d)`` array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise InputError(f"points must be at most 2-D, got shape {arr.shape}")
    return arr


def _require_resolved(spec):
    if not spec.is_resolved:
        raise InputError("kernel bandwidth is unresolved; call KernelSpec.resolve first")


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if spec.kind == KRONECKER_DELTA:
        return 1.0 if np.array_equal(a, b) else 0.0
    _require_resolved(spec)
    sq = float(np.sum((a - b) ** 2))
    return math.exp(-sq / (2.0 * spec.lengthscale**2))


def cross_gram(spec: KernelSpec, rows, cols) -> np.ndarray:
    rows = as_points(rows)
    cols = as_points(cols)
    if rows.shape[0] == 0 or cols.shape[0] == 0:
        raise InputError("cross_gram needs at least one point on each side")
    if rows.shape[1] != cols.shape[1]:
        raise InputError(f"dimension mismatch: {rows.shape[1]} vs {cols.shape[1]}")
    if spec.kind == KRONECKER_DELTA:
        return _backend.delta_cross_gram(rows, cols)
    _require_resolved(spec)
    return _backend.rbf_cross_gram(rows, cols, spec.lengthscale)


def gram(spec: KernelSpec, points) -> np.ndarray:
    points = as_points(points)
    if points.shape[0] == 0:
        raise InputError("gram needs at least one point")
    if spec.kind == KRONECKER_DELTA:
        return _backend.delta_cross_gram(points, points)
    _require_resolved(spec)
    return _backend.rbf_gram(points, spec.lengthscale)


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def khatri_rao_columnwise(a, b) -> np.ndarray:
    """Column-wise Khatri-Rao product of ``a`` (m, n) and ``b`` (p, n).

    Column ``j`` of the result is ``kron(a[:, j], b[:, j])``: row
    ``i * p + k`` holds ``a[i, j] * b[k, j]`` (row-major over the first
    factor). ``vec(alpha)`` in the bridge module uses the same order, so
    ``alpha.ravel()`` lines up with these rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise InputError("khatri_rao_columnwise expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise InputError(f"column-count mismatch: {a.shape[1]} vs {b.shape[1]}")
    return _backend.khatri_rao_columnwise(a, b)


def face_splitting(a, b) -> np.ndarray:
    """Row-wise Khatri-Rao product, ``khatri_rao_columnwise(a.T, b.T).T``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise InputError(f"row-count mismatch: {a.shape[0]} vs {b.shape[0]}")
    return _backend.face_splitting(a, b)


class RidgeFactor:
    """Cholesky factor of ``A + lambda_times_n * I`` for repeated solves.

    If the first factorization fails, jitter ``1e-10 * trace(A) / n`` is
    added once before giving up.
    """

    def __init__(self, a, lambda_times_n):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputError(f"ridge system must be square, got {a.shape}")
        if lambda_times_n < 0:
            raise InputError("lambda_times_n must be nonnegative")
        n = a.shape[0]
        self.size = n
        self.jitter = 0.0
        reg = a + lambda_times_n * np.eye(n)
        try:
            self._cho = scipy.linalg.cho_factor(reg, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            self.jitter = 1e-10 * max(float(np.trace(a)), 1.0) / max(n, 1)
            try:
                self._cho = scipy.linalg.cho_factor(reg + self.jitter * np.eye(n), lower=True)
            except np.linalg.LinAlgError as exc:
                eig = np.linalg.eigvalsh(0.5 * (reg + reg.T))
                raise NumericalError(
                    f"ridge system of size {n} is not positive definite after jitter "
                    f"{self.jitter:.3g}: min eigenvalue {eig[0]:.3g}, "
                    f"max eigenvalue {eig[-1]:.3g}, lambda*n={lambda_times_n:.3g}"
                ) from exc

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.size:
            raise InputError(f"rhs has {rhs.shape[0]} rows, system has {self.size}")
        return scipy.linalg.cho_solve(self._cho, rhs)


def ridge_solve(a, lambda_times_n, rhs):
    """Solve ``(A + lambda_times_n * I) x = rhs`` for symmetric PSD ``A``."""
    return RidgeFactor(a, lambda_times_n).solve(rhs)


def median_heuristic(points) -> float:
    """Median pairwise Euclidean distance; 1.0 when that median is zero."""
    points = as_points(points)
    if points.shape[0] < 2:
        raise InputError("median heuristic needs at least two points")
    med = float(np.median(_backend.pairwise_distances(points)))
    return med if med > 0 else 1.0
