"""Identifiability diagnostics over stacked CMEs, and seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cme import CmeModel, fit_cme_env, mean_embedding_evaluations
from .errors import InputError
from .kernelcore import KernelSet, as_points

Z95 = 1.96
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class StackedCmeMatrix:
    rows: np.ndarray
    environment_ids: tuple

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise InputError("stacked CME matrix needs at least one row")
        if len(self.environment_ids) != self.rows.shape[0]:
            raise InputError("one environment id per row")


@dataclass(frozen=True)
class RankReport:
    singular_values: np.ndarray
    effective_rank: int
    threshold_used: float
    resolvable_rank: int
    eta_used: float
    degenerate: bool = False

    def to_dict(self):
        return {"singular_values": [float(s) for s in self.singular_values],
                "effective_rank": self.effective_rank, "threshold_used": self.threshold_used,
                "resolvable_rank": self.resolvable_rank, "eta_used": self.eta_used,
                "degenerate": self.degenerate}


def stack_cme_representations(per_env_cmes: Mapping[int, CmeModel], reference_proxies,
                              reference_x) -> StackedCmeMatrix:
    """Row ``e`` holds ``<mu_{W|x,e}, phi(w_g)>`` over the reference proxy grid."""
    if not per_env_cmes:
        raise InputError("need at least one CME")
    envs = sorted(per_env_cmes)
    kw = {per_env_cmes[e].kernel_w for e in envs}
    if len(kw) != 1:
        raise InputError("all CMEs must share the proxy kernel")
    grid = as_points(reference_proxies)
    if grid.shape[0] < len(envs):
        raise InputError("reference grid must have at least one point per environment")
    x = np.atleast_1d(np.asarray(reference_x, dtype=np.float64))[None, :]
    rows = np.vstack([mean_embedding_evaluations(per_env_cmes[e], x, e, grid)[0] for e in envs])
    return StackedCmeMatrix(rows, tuple(envs))


def quantile_grid(values, size: int) -> np.ndarray:
    """``size`` quantile-spaced points of the pooled proxy values (column-wise)."""
    pts = as_points(values)
    q = np.linspace(0.0, 1.0, size)
    return np.quantile(pts, q, axis=0)


def resolvable_rank(rows: Sequence, eta: float) -> int:
    """Greedy count of rows whose distance to the span of accepted rows is at least ``eta``.

    Residuals at or below a 1e-10 relative noise floor are never accepted, so
    ``eta == 0`` recovers the linear-algebraic rank and the count stays
    non-increasing in ``eta``.
    """
    if eta < 0:
        raise InputError("eta must be nonnegative")
    mat = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if mat.size == 0:
        return 0
    basis = np.zeros((0, mat.shape[1]))
    for row in mat:
        residual = row - basis.T @ (basis @ row)
        # second pass of Gram-Schmidt for numerical orthogonality
        residual = residual - basis.T @ (basis @ residual)
        dist = float(np.linalg.norm(residual))
        scale = max(1.0, float(np.linalg.norm(row)))
        accept = dist > RESIDUAL_TOL * scale and dist >= eta
        if accept:
            basis = np.vstack([basis, residual / dist])
    return basis.shape[0]


def effective_rank(m, relative_threshold: float = 1e-2, eta: float = 0.05) -> RankReport:
    """Count singular values above ``relative_threshold * sigma_max``."""
    if not 0 < relative_threshold < 1:
        raise InputError("relative_threshold must lie in (0, 1)")
    mat = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if mat.size == 0:
        raise InputError("matrix must be nonempty")
    if not np.all(np.isfinite(mat)):
        raise InputError("matrix must be finite")
    sv = np.linalg.svd(mat, compute_uv=False)
    top = float(sv[0]) if sv.size else 0.0
    if top == 0.0:
        return RankReport(sv, 0, relative_threshold, 0, eta, degenerate=True)
    rank = int(np.sum(sv > relative_threshold * top))
    return RankReport(sv, rank, relative_threshold, resolvable_rank(mat, eta), eta)


def rank_diagnostic(samples, kernels: KernelSet, lambda_cme: float, grid_size: int = 32,
                    threshold: float = 1e-2, eta: float = 0.05) -> RankReport:
    """Fit one CME per environment, stack them on a shared quantile grid, and rank the stack.

    Kernel bandwidths are resolved on the pooled samples; the reference
    covariate is the pooled covariate median.
    """
    kernels = kernels if kernels.is_resolved else kernels.resolve(samples)
    cmes = {int(e): fit_cme_env(samples, int(e), kernels, lambda_cme) for e in samples.environments}
    grid = quantile_grid(samples.w, grid_size)
    ref_x = np.median(samples.x, axis=0)
    stacked = stack_cme_representations(cmes, grid, ref_x)
    return effective_rank(stacked.rows, threshold, eta)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    lower: float
    upper: float
    n: int
    std_undefined: bool = False


@dataclass
class Summary:
    metrics: dict = field(default_factory=dict)

    def __getitem__(self, key) -> MetricSummary:
        return self.metrics[key]


def summarize(values) -> MetricSummary:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InputError("need at least one value")
    mean = float(v.mean())
    if v.size == 1:
        return MetricSummary(mean, 0.0, mean, mean, 1, std_undefined=True)
    std = float(v.std(ddof=1))
    half = Z95 * std / math.sqrt(v.size)
    return MetricSummary(mean, std, mean - half, mean + half, int(v.size))


def aggregate_metrics(runs: Sequence[Mapping[str, float]]) -> Summary:
    """Mean, sample std and a normal 95% interval per metric across runs."""
    if not runs:
        raise InputError("need at least one run")
    names = sorted({k for r in runs for k in r})
    return Summary({k: summarize([r[k] for r in runs if k in r]) for k in names})
