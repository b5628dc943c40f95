"""Conditional mean embeddings of the proxy given (covariate, environment).

The embedding is never materialized: a fitted model keeps its anchors and
the Cholesky factor of ``K_Z * K_X + lambda * m * I`` (entrywise product),
and downstream code works with the weight vectors
``b(x, z) = (K_Z * K_X + lambda * m * I)^{-1} (k_Z(z) * k_X(x))``
together with the anchor proxies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EnvironmentEmptyError, InputError
from .kernelcore import KernelSet, RidgeFactor, as_points, cross_gram, gram, kernel_eval
from .samples import Samples


@dataclass(frozen=True, eq=False)
class CmeModel:
    anchor_covariates: np.ndarray
    anchor_environments: np.ndarray
    anchor_proxies: np.ndarray
    kernels: KernelSet
    lambda_cme: float
    factor: RidgeFactor

    @property
    def size(self):
        return self.anchor_covariates.shape[0]

    @property
    def kernel_x(self):
        return self.kernels.x

    @property
    def kernel_z(self):
        return self.kernels.z

    @property
    def kernel_w(self):
        return self.kernels.w


@dataclass(frozen=True)
class CmeWeights:
    weights: np.ndarray
    query_covariate: np.ndarray
    query_environment: int


def _env_points(z):
    return np.asarray(z, dtype=np.float64).reshape(-1, 1)


def _joint_gram(kernels, x, z):
    return gram(kernels.z, _env_points(z)) * gram(kernels.x, x)


def fit_cme(samples: Samples, kernels: KernelSet, lambda_cme: float) -> CmeModel:
    """Ridge-regress ``phi(w)`` on ``phi(x) (x) phi(z)`` with regularizer ``lambda_cme * m``."""
    if samples.w is None:
        raise InputError("every CME training sample needs a proxy")
    if len(samples) < 1:
        raise InputError("fit_cme needs at least one sample")
    if not lambda_cme > 0:
        raise InputError(f"lambda_cme must be positive, got {lambda_cme}")
    if not np.all(np.isfinite(samples.w)):
        raise InputError("proxies must be finite")
    kernels = kernels if kernels.is_resolved else kernels.resolve(samples)
    m = len(samples)
    factor = RidgeFactor(_joint_gram(kernels, samples.x, samples.z), lambda_cme * m)
    return CmeModel(samples.x, samples.z, samples.w, kernels, float(lambda_cme), factor)


def fit_cme_env(samples: Samples, environment: int, kernels: KernelSet,
                lambda_cme: float) -> CmeModel:
    """Refit on the samples of one environment, regularizer ``lambda_cme * n_env``."""
    subset = samples.filter_env(environment)
    if len(subset) == 0:
        raise EnvironmentEmptyError(environment)
    return fit_cme(subset, kernels, lambda_cme)


def _rhs(model: CmeModel, x, z):
    x = as_points(x)
    if x.shape[1] != model.anchor_covariates.shape[1]:
        raise InputError(
            f"query dimension {x.shape[1]} != anchor dimension {model.anchor_covariates.shape[1]}"
        )
    if not np.all(np.isfinite(x)):
        raise InputError("query covariates must be finite")
    z = np.broadcast_to(np.asarray(z), (x.shape[0],))
    kz = cross_gram(model.kernel_z, _env_points(model.anchor_environments), _env_points(z))
    kx = cross_gram(model.kernel_x, model.anchor_covariates, x)
    return kz * kx


def embed_weights_many(model: CmeModel, x, z) -> np.ndarray:
    """Weights for a batch of queries, shape ``(m, n_queries)``.

    ``z`` may be a scalar environment shared by all queries.
    """
    return model.factor.solve(_rhs(model, x, z))


def embed_weights(model: CmeModel, x, z) -> CmeWeights:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    b = embed_weights_many(model, x[None, :], z)[:, 0]
    return CmeWeights(b, x, int(z))


def embedding_gram_column(model: CmeModel, w_points) -> np.ndarray:
    """``k_W(w_i, w'_l)`` between anchor proxies and ``w_points``; shape (m, L)."""
    w_points = as_points(w_points)
    if w_points.shape[0] == 0:
        raise InputError("w_points must be nonempty")
    return cross_gram(model.kernel_w, model.anchor_proxies, w_points)


def prior_variance(kernels: KernelSet, x, z) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return kernel_eval(kernels.x, x, x) * kernel_eval(kernels.z, [z], [z])


def posterior_variance_many(model: Optional[CmeModel], x, z, kernels: KernelSet = None,
                            clamp=True) -> np.ndarray:
    """Posterior variance of the embedding at each query.

    ``k(x,x) k(z,z) - v^T (K_Z * K_X + n * lambda * I)^{-1} v`` with
    ``v = k_X(x) * k_Z(z)`` over the model's anchors. ``model=None`` (no
    queries yet) gives the prior ``k(x,x) k(z,z)``; ``kernels`` is then
    required.
    """
    x = as_points(x)
    n = x.shape[0]
    z = np.broadcast_to(np.asarray(z), (n,))
    ks = kernels if model is None else model.kernels
    if ks is None:
        raise InputError("kernels are required when no model is given")
    prior = np.array([prior_variance(ks, x[i], int(z[i])) for i in range(n)])
    if model is None or model.size == 0:
        return prior
    v = _rhs(model, x, z)
    var = prior - np.einsum("ij,ij->j", v, model.factor.solve(v))
    return np.maximum(var, 0.0) if clamp else var


def posterior_variance(model: Optional[CmeModel], x, z, kernels: KernelSet = None,
                       clamp=True) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(posterior_variance_many(model, x[None, :], z, kernels, clamp)[0])


def mean_embedding_evaluations(model: CmeModel, x, z, w_grid) -> np.ndarray:
    """``<mu_{W|x,z}, phi(w_g)>`` for every grid point; shape (n_queries, G)."""
    b = embed_weights_many(model, x, z)
    return b.T @ embedding_gram_column(model, w_grid)
