"""The active learning loop: initial fit, query rounds, CME refits, bridge adaptation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import acquisition as acq
from .bridge import (AdaptationConfig, BridgeModel, adapt_bridge, fit_bridge_closed_form,
                     predict_many, split_stages)
from .cme import CmeModel, fit_cme_env
from .config import ExperimentConfig
from .errors import BudgetExhausted, EnvironmentEmptyError, InputError
from .kernelcore import KernelSet
from .samples import Samples
from .scm import Pools

log = logging.getLogger(__name__)


class PoolOracle:
    """Answers proxy and label queries from the simulator's hidden values.

    Answered candidates leave the pool; ``remaining`` lists the original
    indices still available, in their original order.
    """

    def __init__(self, pool: Samples):
        if pool.w is None or pool.y is None:
            raise InputError("the oracle needs the pool's hidden proxies and outcomes")
        self._pool = pool
        self._remaining = np.ones(len(pool), dtype=bool)
        self.proxy_answers = 0
        self.label_answers = 0

    @property
    def remaining(self) -> np.ndarray:
        return np.flatnonzero(self._remaining)

    def visible(self) -> Samples:
        """Remaining candidates with covariates and environments only."""
        return self._pool.subset(self.remaining).without_hidden()

    @property
    def budget_remaining(self):
        return int(self._remaining.sum())

    def _take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and not np.all(self._remaining[idx]):
            raise InputError("candidate already answered")
        self._remaining[idx] = False
        return self._pool.subset(idx)

    def answer_proxy(self, idx) -> Samples:
        out = self._take(idx)
        self.proxy_answers += len(out)
        return Samples(out.x, out.z, out.w)

    def answer_label(self, idx) -> Samples:
        out = self._take(idx)
        self.label_answers += len(out)
        return Samples(out.x, out.z, out.w, out.y)


@dataclass
class RoundLog:
    round_index: int
    method: str
    strategy: str
    selected_proxy_indices: list
    selected_label_indices: list
    score_min: float | None
    score_mean: float | None
    score_max: float | None
    per_env_cme_anchor_counts: dict
    adaptation_objective_before: float | None
    adaptation_objective_after: float | None
    target_mse: float | None
    pool_remaining: int
    n_proxy_queried: int
    n_label_queried: int
    skipped_terms: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["per_env_cme_anchor_counts"] = {str(k): v for k, v in sorted(d["per_env_cme_anchor_counts"].items())}
        return json.dumps(d, sort_keys=True)


def write_round_logs(logs, path):
    with open(path, "w") as fh:
        for entry in logs:
            fh.write(entry.to_json() + "\n")


@dataclass
class PqalResult:
    bridge: BridgeModel
    cmes: dict
    logs: list
    initial_bridge: BridgeModel
    kernels: KernelSet
    proxy_set: Samples | None
    label_set: Samples | None

    @property
    def final_mse(self):
        for entry in reversed(self.logs):
            if entry.target_mse is not None:
                return entry.target_mse
        return None


def evaluate_target_mse(bridge: BridgeModel, target_cme: CmeModel | None, heldout: Samples) -> float:
    """Mean squared error of bridge predictions on labeled held-out target samples."""
    if heldout.y is None or len(heldout) == 0:
        raise InputError("held-out set must be nonempty and labeled")
    if target_cme is None:
        raise EnvironmentEmptyError(int(heldout.z[0]))
    pred = predict_many(bridge, target_cme, heldout.x, heldout.z)
    return float(np.mean((heldout.y - pred) ** 2))


def selection_seed(seed, round_index):
    return np.random.SeedSequence([int(seed), 7919, int(round_index)])


class _ActiveState:
    """Query bookkeeping shared by PQAL and the query-spending baselines."""

    def __init__(self, pools: Pools, oracle: PoolOracle, kernels: KernelSet, lambda_cme: float):
        self.pools = pools
        self.oracle = oracle
        self.kernels = kernels
        self.lambda_cme = lambda_cme
        self.proxy_parts = []
        self.label_parts = []
        self.cmes = {e: fit_cme_env(pools.labeled, e, kernels, lambda_cme)
                     for e in pools.labeled.environments}

    def _cat(self, parts):
        return Samples.concat(parts) if parts else None

    @property
    def proxy_set(self):
        return self._cat(self.proxy_parts)

    @property
    def label_set(self):
        return self._cat(self.label_parts)

    def queried_with_proxy(self):
        parts = [Samples(p.x, p.z, p.w) for p in self.proxy_parts + self.label_parts]
        return self._cat(parts)

    def per_env_anchor_sets(self):
        """The proxy-bearing samples each environment's CME is fitted on.

        Source environments keep their labeled samples; queried samples of any
        environment are added to it.
        """
        queried = self.queried_with_proxy()
        envs = set(self.pools.labeled.environments)
        if queried is not None:
            envs |= set(queried.environments)
        out = {}
        for e in sorted(envs):
            parts = [self.pools.labeled.filter_env(e)]
            if queried is not None:
                parts.append(queried.filter_env(e))
            parts = [Samples(p.x, p.z, p.w) for p in parts if len(p) > 0]
            out[e] = Samples.concat(parts)
        return out

    def counts_with_proxy(self):
        counts = {}
        for e, s in self.per_env_anchor_sets().items():
            counts[e] = len(s)
        return counts

    def score(self, strategy, rpx_ridge):
        visible = self.oracle.visible()
        if strategy == acq.CME_UNCERTAINTY:
            return acq.score_cme_uncertainty(visible, self.per_env_anchor_sets(),
                                             self.kernels, self.lambda_cme)
        if strategy == acq.Z_COVERAGE:
            return acq.score_z_coverage(visible.z, self.counts_with_proxy())
        if strategy == acq.RPX:
            return acq.score_rpx(visible.x, self.kernels.x, rpx_ridge)
        return None

    def select(self, strategy, v_p, v_lb, seed, round_index, rpx_ridge=1.0):
        visible = self.oracle.visible()
        scores = self.score(strategy, rpx_ridge)
        proxy_pos, label_pos = acq.select_batch(
            scores, visible.z, v_p, v_lb, self.pools.target_env,
            rng_seed=selection_seed(seed, round_index), strategy=strategy)
        remaining = self.oracle.remaining
        return [int(remaining[i]) for i in proxy_pos], [int(remaining[i]) for i in label_pos], scores

    def query(self, proxy_idx, label_idx):
        if proxy_idx:
            self.proxy_parts.append(self.oracle.answer_proxy(proxy_idx))
        if label_idx:
            self.label_parts.append(self.oracle.answer_label(label_idx))

    def refit_cmes(self, envs=None):
        anchors = self.per_env_anchor_sets()
        for e in (anchors if envs is None else envs):
            if e in anchors:
                self.cmes[e] = fit_cme_env(anchors[e], e, self.kernels, self.lambda_cme)

    def target_proxy_only(self):
        s = self.proxy_set
        return None if s is None else s.filter_env(self.pools.target_env)

    def target_labeled(self):
        s = self.label_set
        return None if s is None else s.filter_env(self.pools.target_env)


def adaptation_config(cfg: ExperimentConfig, lambda_sim=None) -> AdaptationConfig:
    r = cfg.regularization
    return AdaptationConfig(lambda_tgt=r.lambda_tgt,
                            lambda_sim=r.lambda_sim if lambda_sim is None else lambda_sim,
                            lambda_reg=r.lambda_reg)


def initial_fit(cfg: ExperimentConfig, pools: Pools, seed: int):
    """Resolve kernel bandwidths on the labeled source set and fit the closed-form bridge."""
    kernels = cfg.kernels.kernel_set().resolve(pools.labeled)
    split = split_stages(pools.labeled, cfg.budget.stage_fraction, rng_seed=seed)
    r = cfg.regularization
    bridge = fit_bridge_closed_form(split, kernels, r.lambda_cme, r.lambda_brg)
    return kernels, bridge


def _mse_or_none(bridge, cmes, pools):
    cme = cmes.get(pools.target_env)
    if cme is None or len(pools.heldout) == 0:
        return None
    return evaluate_target_mse(bridge, cme, pools.heldout)


def run_pqal(cfg: ExperimentConfig, pools: Pools, oracle: PoolOracle | None = None,
             seed: int = 0, acquisition: str | None = None) -> PqalResult:
    """Run the full active loop and return the adapted bridge, CMEs and per-round logs.

    Round 1 always selects at random; later rounds use ``acquisition``
    (default: the configured strategy). Pool exhaustion stops the loop early.
    """
    strategy = acquisition or cfg.acquisition
    b, r = cfg.budget, cfg.regularization
    oracle = oracle or PoolOracle(pools.pool)
    kernels, bridge0 = initial_fit(cfg, pools, seed)
    state = _ActiveState(pools, oracle, kernels, r.lambda_cme)
    adapt_cfg = adaptation_config(cfg)
    bridge = bridge0
    logs = []
    for rnd in range(1, b.rounds + 1):
        used = acq.RANDOM if rnd == 1 else strategy
        try:
            proxy_idx, label_idx, scores = state.select(used, b.v_p, b.v_lb, seed, rnd, r.rpx_ridge)
        except BudgetExhausted as exc:
            log.warning("stopping after round %d: %s", rnd - 1, exc)
            break
        state.query(proxy_idx, label_idx)
        touched = set(int(e) for e in pools.pool.z[proxy_idx + label_idx])
        state.refit_cmes(touched)
        bridge, report = adapt_bridge(bridge0, pools.labeled, state.target_labeled(),
                                      state.target_proxy_only(), adapt_cfg)
        logs.append(RoundLog(
            round_index=rnd, method="pqal", strategy=used,
            selected_proxy_indices=proxy_idx, selected_label_indices=label_idx,
            score_min=None if scores is None else float(np.min(scores)),
            score_mean=None if scores is None else float(np.mean(scores)),
            score_max=None if scores is None else float(np.max(scores)),
            per_env_cme_anchor_counts={e: m.size for e, m in state.cmes.items()},
            adaptation_objective_before=report.objective_before,
            adaptation_objective_after=report.objective_after,
            target_mse=_mse_or_none(bridge, state.cmes, pools),
            pool_remaining=oracle.budget_remaining,
            n_proxy_queried=oracle.proxy_answers, n_label_queried=oracle.label_answers,
            skipped_terms=list(report.skipped_terms),
        ))
    return PqalResult(bridge, dict(state.cmes), logs, bridge0, kernels,
                      state.proxy_set, state.label_set)
