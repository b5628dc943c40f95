import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqal import scm
from pqal.acquisition import CME_UNCERTAINTY, RANDOM, RPX, STRATEGIES, Z_COVERAGE
from pqal.active_loop import PoolOracle, evaluate_target_mse, run_pqal, write_round_logs
from pqal.bridge import BridgeModel
from pqal.cme import fit_cme
from pqal.config import Budget, ExperimentConfig
from pqal.errors import EnvironmentEmptyError, InputError
from pqal.kernelcore import KernelSet, KernelSpec
from pqal.samples import Samples


def small_cfg(rounds=3, v_p=3, v_lb=2, pool_size=40, **kw):
    budget = Budget(rounds=rounds, v_p=v_p, v_lb=v_lb, n_source_labeled=15, pool_size=pool_size,
                    eval_size=60, **kw)
    return ExperimentConfig(budget=budget)


def pools_for(cfg, seed):
    b = cfg.budget
    return scm.build_pools(cfg.scm.to_scm_config(seed), b.n_source_labeled, b.pool_size,
                           cfg.scm.target_env, b.target_fraction, b.eval_size)


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.sampled_from(STRATEGIES), st.floats(0.0, 1.0))
def test_partition_and_disjointness(seed, strategy, fraction):
    cfg = small_cfg(target_fraction=fraction, pool_size=30)
    pools = pools_for(cfg, seed)
    n_target = int(np.sum(pools.pool.z == pools.target_env))
    res = run_pqal(cfg, pools, seed=seed, acquisition=strategy)
    seen = set()
    for entry in res.logs:
        assert entry.pool_remaining + entry.n_proxy_queried + entry.n_label_queried == len(pools.pool)
        picked = entry.selected_proxy_indices + entry.selected_label_indices
        assert len(set(picked)) == len(picked) and not seen & set(picked)
        seen |= set(picked)
        assert len(entry.selected_proxy_indices) == 3 and len(entry.selected_label_indices) == 2
        assert all(pools.pool.z[i] == pools.target_env for i in entry.selected_label_indices)
    if len(res.logs) < cfg.budget.rounds:
        target_left = n_target - sum(pools.pool.z[i] == pools.target_env for i in seen)
        assert target_left < cfg.budget.v_lb or res.logs[-1].pool_remaining < 5


@settings(max_examples=100)
@given(st.integers(0, 10_000))
def test_first_round_is_random_for_every_strategy(seed):
    cfg = small_cfg(rounds=1, pool_size=25)
    pools = pools_for(cfg, seed)
    firsts = []
    for strategy in (RANDOM, CME_UNCERTAINTY, Z_COVERAGE, RPX):
        entry = run_pqal(cfg, pools, seed=seed, acquisition=strategy).logs[0]
        assert entry.strategy == RANDOM
        firsts.append((entry.selected_proxy_indices, entry.selected_label_indices))
    assert all(f == firsts[0] for f in firsts)


def _argmax_pools(seed):
    """Env-0 pool candidates duplicate env-0 labeled anchors, so their variance is ~0."""
    c = scm.ScmConfig(seed=seed)
    full = scm.build_pools(c, n_source_labeled_per_env=15, pool_size=20, eval_size=40)
    env0 = full.labeled.filter_env(0)
    pool = Samples.concat([env0, full.pool])
    return scm.Pools(full.labeled, pool, full.heldout, full.target_env, full.source_envs)


@pytest.mark.parametrize("seed", range(6))
def test_second_round_argmax_skips_saturated_environment(seed):
    from pqal.config import Regularization

    cfg = small_cfg(rounds=2, pool_size=20).replace(regularization=Regularization(lambda_cme=1e-12))
    pools = _argmax_pools(seed)
    res = run_pqal(cfg, pools, seed=seed, acquisition=CME_UNCERTAINTY)
    second = res.logs[1]
    assert second.score_max > 0.1
    assert all(pools.pool.z[i] != 0 for i in second.selected_proxy_indices)


def test_round_logs_are_byte_identical(tmp_path):
    cfg = small_cfg()
    paths = []
    for k in range(2):
        res = run_pqal(cfg, pools_for(cfg, 4), seed=4)
        paths.append(tmp_path / f"r{k}.jsonl")
        write_round_logs(res.logs, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert len(paths[0].read_text().splitlines()) == 3


def test_single_round_without_labels_skips_target_term(caplog):
    cfg = small_cfg(rounds=1, v_p=5, v_lb=0)
    pools = pools_for(cfg, 0)
    with caplog.at_level(logging.WARNING):
        res = run_pqal(cfg, pools, seed=0)
    assert len(res.proxy_set) == 5 and res.label_set is None
    assert "target" in res.logs[0].skipped_terms
    assert any("skipping the target loss" in r.message for r in caplog.records)


@pytest.mark.parametrize("budget", [45, 50, 55, 60])
def test_default_query_sizes_give_budget_over_five_rounds(budget):
    cfg = ExperimentConfig(budget=Budget(rounds=budget // 5, n_source_labeled=15, pool_size=150,
                                         eval_size=50))
    res = run_pqal(cfg, pools_for(cfg, 1), seed=1)
    assert len(res.logs) == budget // 5
    assert res.logs[-1].n_proxy_queried + res.logs[-1].n_label_queried == 5 * (budget // 5)


def test_pool_exhaustion_stops_cleanly():
    cfg = small_cfg(rounds=10, pool_size=50)
    res = run_pqal(cfg, pools_for(small_cfg(rounds=2, pool_size=12), 0), seed=0)
    assert len(res.logs) == 2
    assert res.final_mse is not None


def test_oracle_rejects_repeat_and_hides_answers():
    pools = pools_for(small_cfg(), 0)
    oracle = PoolOracle(pools.pool)
    vis = oracle.visible()
    assert vis.w is None and vis.y is None
    got = oracle.answer_proxy([3])
    assert got.y is None and got.w is not None
    with pytest.raises(InputError):
        oracle.answer_label([3])
    assert 3 not in oracle.remaining and oracle.budget_remaining == len(pools.pool) - 1


KS = KernelSet(KernelSpec.rbf(1.0), KernelSpec.delta(), KernelSpec.rbf(1.0))


def _hand_model(alpha):
    bridge = BridgeModel(np.array([[alpha]]), np.zeros((1, 1)), np.zeros((1, 1)), KS, 1e-3)
    cme = fit_cme(Samples([[0.0]], [0], [[0.0]]), KS, 0.5)
    return bridge, cme


def test_evaluate_target_mse_examples():
    heldout = Samples([[0.0], [1.0], [2.0]], [0, 0, 0], None, [1.0, 0.0, 0.0])
    bridge, cme = _hand_model(2.0)
    # prediction is (4/3) exp(-x^2): one ridge anchor with weight 1/(1 + 0.5)
    expected = ((1 - 4 / 3) ** 2 + (4 / 3 * math.exp(-1)) ** 2 + (4 / 3 * math.exp(-4)) ** 2) / 3
    assert evaluate_target_mse(bridge, cme, heldout) == pytest.approx(expected, rel=1e-8)
    zero, _ = _hand_model(0.0)
    assert evaluate_target_mse(zero, cme, heldout) == pytest.approx(1 / 3)
    perfect = Samples(heldout.x, heldout.z, None, 4 / 3 * np.exp(-heldout.x[:, 0] ** 2))
    assert evaluate_target_mse(bridge, cme, perfect) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(EnvironmentEmptyError):
        evaluate_target_mse(bridge, None, heldout)
    with pytest.raises(InputError):
        evaluate_target_mse(bridge, cme, Samples([[0.0]], [0]))
