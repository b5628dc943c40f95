"""Comparison methods sharing the PQAL kernel stack and seeded pools.

* ``proxy-da``: source bridge frozen; the budget buys target proxies only.
* ``few-shot-erm``: kernel ridge from X to Y on source plus random target labels.
* ``oracle``: every pool label is revealed; alpha is fine-tuned without the manifold term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import acquisition as acq
from .active_loop import (PoolOracle, RoundLog, _ActiveState, _mse_or_none, adaptation_config,
                          initial_fit, selection_seed)
from .bridge import BridgeModel, adapt_bridge
from .config import ExperimentConfig
from .errors import BudgetExhausted, InputError
from .kernelcore import KernelSpec, RidgeFactor, as_points, cross_gram, gram
from .scm import Pools

log = logging.getLogger(__name__)

PROXY_DA = "proxy-da"
FEW_SHOT_ERM = "few-shot-erm"
ORACLE = "oracle"
BASELINE_KINDS = (PROXY_DA, FEW_SHOT_ERM, ORACLE)

# recorded alongside every few-shot result
FEW_SHOT_NOTE = "kernel ridge regression on X (no multilayer network)"


@dataclass
class BaselineResult:
    method: str
    logs: list
    bridge: BridgeModel | None = None
    cmes: dict | None = None
    predictor: object = None
    labels_used: int = 0

    @property
    def final_mse(self):
        for entry in reversed(self.logs):
            if entry.target_mse is not None:
                return entry.target_mse
        return None


def _log(rnd, method, proxy_idx, label_idx, cmes, mse, oracle, before=None, after=None,
         skipped=()):
    return RoundLog(round_index=rnd, method=method, strategy=acq.RANDOM,
                    selected_proxy_indices=list(proxy_idx), selected_label_indices=list(label_idx),
                    score_min=None, score_mean=None, score_max=None,
                    per_env_cme_anchor_counts={e: m.size for e, m in (cmes or {}).items()},
                    adaptation_objective_before=before, adaptation_objective_after=after,
                    target_mse=mse, pool_remaining=oracle.budget_remaining,
                    n_proxy_queried=oracle.proxy_answers, n_label_queried=oracle.label_answers,
                    skipped_terms=list(skipped))


def _random_target_picks(oracle: PoolOracle, target_env, k, seed, rnd):
    visible = oracle.visible()
    positions = np.flatnonzero(visible.z == target_env)
    if positions.size < k:
        raise BudgetExhausted(f"{positions.size} target candidates left, {k} requested")
    rng = np.random.default_rng(selection_seed(seed, rnd))
    picked = rng.choice(positions, size=k, replace=False)
    remaining = oracle.remaining
    return sorted(int(remaining[i]) for i in picked)


def run_proxy_da(pools: Pools, oracle: PoolOracle | None, cfg: ExperimentConfig,
                 seed: int = 0) -> BaselineResult:
    """Source bridge with no adaptation; each round buys ``v_p + v_lb`` random target proxies."""
    b, r = cfg.budget, cfg.regularization
    oracle = oracle or PoolOracle(pools.pool)
    kernels, bridge = initial_fit(cfg, pools, seed)
    state = _ActiveState(pools, oracle, kernels, r.lambda_cme)
    logs = []
    for rnd in range(1, b.rounds + 1):
        try:
            picks = _random_target_picks(oracle, pools.target_env, b.v_p + b.v_lb, seed, rnd)
        except BudgetExhausted as exc:
            log.warning("proxy-da stopping after round %d: %s", rnd - 1, exc)
            break
        state.query(picks, [])
        state.refit_cmes([pools.target_env])
        logs.append(_log(rnd, PROXY_DA, picks, [], state.cmes,
                         _mse_or_none(bridge, state.cmes, pools), oracle))
    return BaselineResult(PROXY_DA, logs, bridge=bridge, cmes=dict(state.cmes))


@dataclass(frozen=True)
class RidgePredictor:
    """Kernel ridge regressor on covariates only."""

    anchors: np.ndarray
    coef: np.ndarray
    kernel: KernelSpec

    def predict(self, x) -> np.ndarray:
        return cross_gram(self.kernel, as_points(x), self.anchors) @ self.coef


def fit_kernel_ridge(x, y, kernel: KernelSpec, lam: float) -> RidgePredictor:
    """Minimize ``mean (y - f(x))^2 + lam ||f||^2``, i.e. ``(K + n lam I) c = y``."""
    x = as_points(x)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        raise InputError("kernel ridge needs at least one sample")
    if not kernel.is_resolved:
        kernel = kernel.resolve(x)
    coef = RidgeFactor(gram(kernel, x), lam * len(x)).solve(y)
    return RidgePredictor(x.copy(), coef, kernel)


def run_few_shot_erm(pools: Pools, oracle: PoolOracle | None, cfg: ExperimentConfig,
                     seed: int = 0) -> BaselineResult:
    """Pool source labels with ``v_lb`` random target labels per round; ridge on X alone."""
    b, r = cfg.budget, cfg.regularization
    oracle = oracle or PoolOracle(pools.pool)
    kernel = cfg.kernels.kernel_set().x.resolve(pools.labeled.x)
    xs, ys = [pools.labeled.x], [pools.labeled.y]
    logs = []
    predictor = fit_kernel_ridge(pools.labeled.x, pools.labeled.y, kernel, r.lambda_erm)
    for rnd in range(1, b.rounds + 1):
        picks = []
        if b.v_lb > 0:
            try:
                picks = _random_target_picks(oracle, pools.target_env, b.v_lb, seed, rnd)
            except BudgetExhausted as exc:
                log.warning("few-shot-erm stopping after round %d: %s", rnd - 1, exc)
                break
            got = oracle.answer_label(picks)
            xs.append(got.x)
            ys.append(got.y)
        predictor = fit_kernel_ridge(np.vstack(xs), np.concatenate(ys), kernel, r.lambda_erm)
        mse = None
        if len(pools.heldout):
            mse = float(np.mean((pools.heldout.y - predictor.predict(pools.heldout.x)) ** 2))
        logs.append(_log(rnd, FEW_SHOT_ERM, [], picks, {}, mse, oracle))
    return BaselineResult(FEW_SHOT_ERM, logs, predictor=predictor,
                          labels_used=len(pools.labeled) + oracle.label_answers)


def run_oracle(pools: Pools, cfg: ExperimentConfig, seed: int = 0) -> BaselineResult:
    """Reveal every pool candidate, refit all CMEs, and fine-tune alpha on source + target losses.

    The bridge basis stays anchored on the labeled source set; the adaptation
    uses every revealed target label and no manifold term.
    """
    r = cfg.regularization
    oracle = PoolOracle(pools.pool)
    kernels, bridge0 = initial_fit(cfg, pools, seed)
    state = _ActiveState(pools, oracle, kernels, r.lambda_cme)
    everything = [int(i) for i in oracle.remaining]
    if everything:
        state.query([], everything)
        state.refit_cmes()
    target = state.target_labeled()
    bridge, report = adapt_bridge(bridge0, pools.labeled, target, None,
                                  adaptation_config(cfg, lambda_sim=0.0))
    entry = _log(cfg.budget.rounds, ORACLE, [], everything, state.cmes,
                 _mse_or_none(bridge, state.cmes, pools), oracle,
                 report.objective_before, report.objective_after, report.skipped_terms)
    return BaselineResult(ORACLE, [entry], bridge=bridge, cmes=dict(state.cmes),
                          labels_used=len(pools.labeled) + oracle.label_answers)

