"""Two-stage kernel bridge estimation, target adaptation and prediction.

The bridge is ``h = sum_ij alpha_ij phi(x~_j) (x) phi(w_i)`` over fixed
anchors: proxies ``w_i`` from the stage-1 sample and covariates ``x~_j``
from the stage-2 sample. ``alpha.ravel()`` (row-major, proxy index outer)
is the vectorized parameter everywhere in this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cme import CmeModel, embed_weights_many, fit_cme
from .errors import InputError, NumericalError
from .kernelcore import (KernelSet, RidgeFactor, as_points, cross_gram, face_splitting,
                         gram, median_heuristic)
from .samples import Samples

log = logging.getLogger(__name__)

DIRECT = "direct-quadratic"
GRADIENT = "gradient-descent"


@dataclass(frozen=True, eq=False)
class BridgeModel:
    alpha: np.ndarray
    anchor_proxies: np.ndarray
    anchor_covariates: np.ndarray
    kernels: KernelSet
    lambda_brg: float

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        if alpha.shape != (self.anchor_proxies.shape[0], self.anchor_covariates.shape[0]):
            raise InputError(f"alpha shape {alpha.shape} does not match the anchors")
        if not np.all(np.isfinite(alpha)):
            raise NumericalError("bridge coefficients are not finite")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    def with_alpha(self, alpha) -> BridgeModel:
        return replace(self, alpha=alpha)


@dataclass(frozen=True)
class StageSplit:
    stage1: Samples
    stage2: Samples


@dataclass(frozen=True)
class AdaptationConfig:
    lambda_tgt: float = 1.0
    lambda_sim: float = 1e-3
    lambda_reg: float = 1e-2
    similarity_bandwidth: float | None = None
    solver: str = DIRECT
    max_iterations: int = 20000
    step_size: float | None = None
    tolerance: float = 1e-8

    def __post_init__(self):
        for name in ("lambda_tgt", "lambda_sim", "lambda_reg"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")
        if self.solver not in (DIRECT, GRADIENT):
            raise InputError(f"unknown solver {self.solver!r}")
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")
        if self.similarity_bandwidth is not None and not self.similarity_bandwidth > 0:
            raise InputError("similarity_bandwidth must be positive")


@dataclass
class AdaptationReport:
    objective_before: float
    objective_after: float
    iterations: int = 0
    skipped_terms: list = field(default_factory=list)


def split_stages(labeled: Samples, fraction: float = 0.5, rng_seed: int = 0) -> StageSplit:
    """Shuffle deterministically and split into two disjoint stages."""
    n = len(labeled)
    if n < 2:
        raise InputError(f"need at least 2 labeled samples to split, got {n}")
    if not 0 < fraction < 1:
        raise InputError("fraction must lie in (0, 1)")
    if labeled.w is None or labeled.y is None:
        raise InputError("stage split needs samples with proxies and outcomes")
    perm = np.random.default_rng(rng_seed).permutation(n)
    n1 = min(max(int(round(fraction * n)), 1), n - 1)
    return StageSplit(labeled.subset(np.sort(perm[:n1])), labeled.subset(np.sort(perm[n1:])))


def fit_stage1_cme(split: StageSplit, kernels: KernelSet, lambda_cme: float) -> CmeModel:
    return fit_cme(split.stage1, kernels, lambda_cme)


def build_gamma(split: StageSplit, kernels: KernelSet, lambda_cme: float) -> np.ndarray:
    """Stage-1 CME weights at every stage-2 point, shape (m1, m2).

    This is ``(K_Z * K_X + lambda m1 I)^{-1} (K_ZZ~ * K_XX~)``.
    """
    cme = fit_stage1_cme(split, kernels, lambda_cme)
    return embed_weights_many(cme, split.stage2.x, split.stage2.z)


def fit_bridge_closed_form(split: StageSplit, kernels: KernelSet, lambda_cme: float,
                           lambda_brg: float) -> BridgeModel:
    if not lambda_brg > 0:
        raise InputError("lambda_brg must be positive")
    if not kernels.is_resolved:
        kernels = kernels.resolve(Samples.concat([split.stage1, split.stage2]))
    s1, s2 = split.stage1, split.stage2
    gamma = build_gamma(split, kernels, lambda_cme)
    k_w = gram(kernels.w, s1.w)
    k_xt = gram(kernels.x, s2.x)
    sigma = (gamma.T @ k_w @ gamma) * k_xt
    sigma = 0.5 * (sigma + sigma.T)
    m2 = len(s2)
    c = RidgeFactor(sigma, lambda_brg * m2).solve(s2.y)
    alpha = gamma * c[None, :]
    return BridgeModel(alpha, s1.w, s2.x, kernels, float(lambda_brg))


def _mean_proxy_gram(model: BridgeModel, cme: CmeModel, x, z):
    """``sum_l b_l(x,z) k_W(w_i, w_l)`` for each bridge proxy anchor; shape (m1, n)."""
    b = embed_weights_many(cme, x, z)
    k_ww = cross_gram(model.kernels.w, model.anchor_proxies, cme.anchor_proxies)
    return k_ww @ b


def predict_many(model: BridgeModel, cme: CmeModel, x, z) -> np.ndarray:
    """``<h, phi(x) (x) mu_{W|x,z}>`` for a batch of queries."""
    x = as_points(x)
    mw = _mean_proxy_gram(model, cme, x, z)
    kx = cross_gram(model.kernels.x, model.anchor_covariates, x)
    return np.einsum("in,ij,jn->n", mw, model.alpha, kx)


def predict(model: BridgeModel, cme: CmeModel, x, z) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(predict_many(model, cme, x[None, :], z)[0])


def bridge_norm_sq(model: BridgeModel, alpha=None) -> float:
    a = model.alpha if alpha is None else alpha
    k_w = gram(model.kernels.w, model.anchor_proxies)
    k_x = gram(model.kernels.x, model.anchor_covariates)
    return float(np.sum(a * (k_w @ a @ k_x)))


def bridge_objective(model: BridgeModel, stage2: Samples, cme: CmeModel,
                     lambda_brg: float) -> float:
    """Regularized stage-2 risk ``mean (y - <h, phi(x) (x) mu>)^2 + lambda ||h||^2``."""
    pred = predict_many(model, cme, stage2.x, stage2.z)
    return float(np.mean((stage2.y - pred) ** 2) + lambda_brg * bridge_norm_sq(model))


def bridge_features(model: BridgeModel, x, w) -> np.ndarray:
    """Rows ``k_W(w_i, w) k_X(x~_j, x)`` flattened like ``alpha.ravel()``; shape (n, m1*m2)."""
    a = cross_gram(model.kernels.w, as_points(w), model.anchor_proxies)
    b = cross_gram(model.kernels.x, as_points(x), model.anchor_covariates)
    return face_splitting(a, b)


def evaluate_fixed_basis(model: BridgeModel, x, w) -> np.ndarray:
    """``f_alpha(x, w)``: the bridge evaluated at observed proxies."""
    return bridge_features(model, x, w) @ model.alpha.ravel()


def manifold_similarity(points_a, points_b, bandwidth: float) -> np.ndarray:
    """Gaussian RBF on the joint (x, w) space.

    ``points_a``/``points_b`` are ``(x, w)`` pairs of arrays.
    """
    if not bandwidth > 0:
        raise InputError("bandwidth must be positive")
    xa, wa = as_points(points_a[0]), as_points(points_a[1])
    xb, wb = as_points(points_b[0]), as_points(points_b[1])
    if len(xa) == 0 or len(xb) == 0:
        raise InputError("manifold_similarity needs nonempty point sets")
    ja = np.hstack([xa, wa])
    jb = np.hstack([xb, wb])
    if ja.shape[1] != jb.shape[1]:
        raise InputError("dimension mismatch between point sets")
    sq = ((ja[:, None, :] - jb[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-sq / (2.0 * bandwidth**2))


class AdaptationProblem:
    """The adaptation objective as an explicit quadratic in ``a = vec(alpha)``.

    objective(a) = a^T H a - 2 g^T a + c, with contributions

    * source:   mean over source labeled samples of (y - f_a(x, w))^2
    * target:   lambda_tgt * mean over target labeled samples
    * manifold: lambda_sim * sum_jk S_jk (f_a(t_j) - f_a(p_k))^2, t over
      labeled target samples, p over proxy-only target samples
    * anchor:   lambda_reg * ||a - a0||^2
    """

    def __init__(self, initial: BridgeModel, source_labeled: Samples,
                 target_labeled: Samples | None, target_proxy_only: Samples | None,
                 config: AdaptationConfig):
        self.initial = initial
        self.config = config
        self.skipped = []
        p = initial.alpha.size
        a0 = initial.alpha.ravel()
        h = np.zeros((p, p))
        g = np.zeros(p)
        c = 0.0

        phi_s = bridge_features(initial, source_labeled.x, source_labeled.w)
        ns = len(source_labeled)
        h += phi_s.T @ phi_s / ns
        g += phi_s.T @ source_labeled.y / ns
        c += float(source_labeled.y @ source_labeled.y) / ns

        has_tlb = target_labeled is not None and len(target_labeled) > 0
        has_pr = target_proxy_only is not None and len(target_proxy_only) > 0
        phi_t = None
        if config.lambda_tgt > 0:
            if has_tlb:
                phi_t = bridge_features(initial, target_labeled.x, target_labeled.w)
                nt = len(target_labeled)
                lt = config.lambda_tgt
                h += lt * phi_t.T @ phi_t / nt
                g += lt * phi_t.T @ target_labeled.y / nt
                c += lt * float(target_labeled.y @ target_labeled.y) / nt
            else:
                log.warning("no labeled target samples yet; skipping the target loss term")
                self.skipped.append("target")

        if config.lambda_sim > 0:
            if has_tlb and has_pr:
                if phi_t is None:
                    phi_t = bridge_features(initial, target_labeled.x, target_labeled.w)
                phi_p = bridge_features(initial, target_proxy_only.x, target_proxy_only.w)
                bw = config.similarity_bandwidth
                if bw is None:
                    joint = np.vstack([
                        np.hstack([target_labeled.x, target_labeled.w]),
                        np.hstack([target_proxy_only.x, target_proxy_only.w]),
                    ])
                    bw = median_heuristic(joint) if len(joint) >= 2 else 1.0
                s = manifold_similarity((target_labeled.x, target_labeled.w),
                                        (target_proxy_only.x, target_proxy_only.w), bw)
                self.similarity = s
                lap = (phi_t.T * s.sum(axis=1)) @ phi_t + (phi_p.T * s.sum(axis=0)) @ phi_p
                cross = phi_t.T @ s @ phi_p
                lap -= cross + cross.T
                h += config.lambda_sim * lap
            else:
                self.skipped.append("manifold")

        if config.lambda_reg > 0:
            h += config.lambda_reg * np.eye(p)
            g += config.lambda_reg * a0
            c += config.lambda_reg * float(a0 @ a0)

        self.h = 0.5 * (h + h.T)
        self.g = g
        self.c = c

    def objective(self, alpha) -> float:
        a = np.asarray(alpha, dtype=np.float64).ravel()
        return float(a @ self.h @ a - 2.0 * self.g @ a + self.c)

    def gradient(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=np.float64).ravel()
        return 2.0 * (self.h @ a - self.g)

    def solve_direct(self) -> np.ndarray:
        if self.config.lambda_reg == 0:
            eig = np.linalg.eigvalsh(self.h)
            if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
                raise NumericalError(
                    f"adaptation normal equations are singular (min eigenvalue {eig[0]:.3g}); "
                    "use lambda_reg > 0")
        try:
            return RidgeFactor(self.h, 0.0).solve(self.g)
        except NumericalError as exc:
            raise NumericalError(
                f"adaptation normal equations are singular ({exc}); use lambda_reg > 0"
            ) from exc

    def solve_gradient(self):
        """Gradient descent from alpha_0 with step ``1 / (2 L)``.

        With ``lambda_reg > 0`` the Hessian's smallest eigenvalue is at least
        ``2 lambda_reg``, so stopping at ``||grad||^2 <= 4 lambda_reg tol``
        bounds the objective gap by ``tol``.
        """
        cfg = self.config
        a = self.initial.alpha.ravel().copy()
        if cfg.step_size is not None:
            step = cfg.step_size
        else:
            top = float(np.linalg.eigvalsh(self.h)[-1])
            step = 1.0 / (2.0 * top)
        mu = 2.0 * cfg.lambda_reg
        it = 0
        for it in range(1, cfg.max_iterations + 1):
            grad = self.gradient(a)
            if mu > 0 and grad @ grad <= 2.0 * mu * cfg.tolerance:
                break
            a -= step * grad
        return a, it


def adapt_bridge(initial: BridgeModel, source_labeled: Samples,
                 target_labeled: Samples | None, target_proxy_only: Samples | None,
                 config: AdaptationConfig = AdaptationConfig()):
    """Fine-tune alpha on source, target and manifold losses around alpha_0.

    Returns ``(BridgeModel, AdaptationReport)``.
    """
    if source_labeled.w is None or source_labeled.y is None:
        raise InputError("source samples need proxies and outcomes")
    problem = AdaptationProblem(initial, source_labeled, target_labeled,
                                target_proxy_only, config)
    before = problem.objective(initial.alpha)
    iterations = 0
    if config.solver == DIRECT:
        a = problem.solve_direct()
    else:
        a, iterations = problem.solve_gradient()
    alpha = a.reshape(initial.alpha.shape)
    report = AdaptationReport(before, problem.objective(alpha), iterations, problem.skipped)
    return initial.with_alpha(alpha), report
