"""Candidate scoring and batch selection for proxy/label queries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .cme import fit_cme, posterior_variance_many
from .errors import BudgetExhausted, InputError
from .kernelcore import KernelSet, KernelSpec, as_points, cross_gram
from .samples import Samples

CME_UNCERTAINTY = "cme-uncertainty"
RANDOM = "random"
Z_COVERAGE = "z-coverage"
RPX = "rpx"
STRATEGIES = (CME_UNCERTAINTY, RANDOM, Z_COVERAGE, RPX)


@dataclass(frozen=True)
class AcquisitionScore:
    candidate_index: int
    score: float
    strategy: str


def as_scores(values, strategy) -> list[AcquisitionScore]:
    return [AcquisitionScore(i, float(v), strategy) for i, v in enumerate(values)]


def score_cme_uncertainty(pool: Samples, per_env_query_sets: Mapping[int, Samples],
                          kernels: KernelSet, lambda_cme: float) -> np.ndarray:
    """CME posterior variance of each candidate under its environment's query set.

    Environments without queries score the prior ``k(x,x) k(z,z)``.
    """
    if len(pool) == 0:
        raise InputError("pool is empty")
    scores = np.empty(len(pool))
    for env in np.unique(pool.z):
        idx = np.flatnonzero(pool.z == env)
        queried = per_env_query_sets.get(int(env))
        model = None
        if queried is not None and len(queried) > 0:
            model = fit_cme(queried, kernels, lambda_cme)
        scores[idx] = posterior_variance_many(model, pool.x[idx], int(env), kernels)
    return scores


def score_rpx(pool_covariates, kernel_x: KernelSpec, ridge: float = 1.0) -> np.ndarray:
    """Representative-x score ``sum_j k(x_i, x_j)^2 / (k(x_i, x_i) + ridge)``."""
    pts = as_points(pool_covariates)
    if pts.shape[0] == 0:
        raise InputError("pool is empty")
    if not ridge > 0:
        raise InputError("ridge must be positive")
    k = cross_gram(kernel_x, pts, pts)
    return (k**2).sum(axis=1) / (np.diag(k) + ridge)


def score_z_coverage(pool_environments, labeled_counts: Mapping[int, int]) -> np.ndarray:
    """``1 / (n_z + 1)`` where ``n_z`` counts samples already collected in ``z``."""
    envs = np.asarray(pool_environments)
    if envs.size == 0:
        raise InputError("pool is empty")
    return np.array([1.0 / (labeled_counts.get(int(z), 0) + 1) for z in envs])


def _top_k(scores, k):
    # stable sort on -score: ties resolve to the lowest index
    return list(np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")[:k])


def select_batch(scores, pool_environments, v_p: int, v_lb: int, target_env: int,
                 rng_seed=None, strategy: str = CME_UNCERTAINTY):
    """Pick ``v_p`` proxy-only and ``v_lb`` labeled queries from the pool.

    The top ``v_p + v_lb`` candidates by score are selected (lowest index wins
    ties). Label queries must come from ``target_env``: they are the
    highest-scoring selected target candidates, topped up from the best
    unselected target candidates when the selection holds too few. With
    ``strategy="random"`` the scores are replaced by a seeded uniform draw.

    Returns ``(proxy_indices, label_indices)`` as lists of pool positions.
    """
    envs = np.asarray(pool_environments)
    n = envs.size
    k = v_p + v_lb
    if v_p < 0 or v_lb < 0 or k == 0:
        raise InputError("need v_p, v_lb >= 0 with v_p + v_lb >= 1")
    if k > n:
        raise BudgetExhausted(f"pool holds {n} candidates, {k} requested")
    if strategy == RANDOM:
        scores = np.random.default_rng(rng_seed).random(n)
    else:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (n,):
            raise InputError("scores and pool sizes differ")
        if not np.all(np.isfinite(scores)):
            raise InputError("scores must be finite")

    order = _top_k(scores, n)
    chosen = order[:k]
    is_target = envs == target_env
    labels = [i for i in chosen if is_target[i]][:v_lb]
    if len(labels) < v_lb:
        extra = [i for i in order[k:] if is_target[i]][: v_lb - len(labels)]
        if len(labels) + len(extra) < v_lb:
            raise BudgetExhausted(f"pool holds too few target candidates for {v_lb} label queries")
        # drop the lowest-scoring non-label picks to make room
        keep = [i for i in chosen if i not in labels]
        keep = keep[: len(keep) - len(extra)]
        labels = labels + extra
        chosen = keep + labels
    label_set = set(labels)
    proxies = [int(i) for i in chosen if i not in label_set]
    labels = sorted((int(i) for i in labels), key=lambda i: (-scores[i], i))
    return proxies, labels


def mutual_information_gaussian(rho: float) -> float:
    """Mutual information of a bivariate Gaussian with correlation ``rho``."""
    if not abs(rho) < 1:
        raise InputError(f"|rho| must be < 1, got {rho}")
    return -0.5 * math.log1p(-rho * rho)
