"""Seeded experiment runner, result persistence, and table/curve emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, scm
from .active_loop import PoolOracle, run_pqal, write_round_logs
from .analysis import rank_diagnostic, summarize
from .config import FORMAT_VERSION, METHODS, ExperimentConfig
from .errors import InputError
from .samples import Samples

log = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
EMPTY_CELL = ""
ROUND_METRIC = "target_mse"
FINAL_METRIC = "final_mse"
RANK_METRIC = "effective_rank"


@dataclass
class ResultRecord:
    config_hash: str
    method: str
    seed: int
    round: int | None
    metric_name: str
    metric_value: float | None
    timestamp: float
    dataset: str = ""
    shift_level: int | None = None
    acquisition: str = ""
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> ResultRecord:
        return cls(**d)


class ExperimentError(RuntimeError):
    """A run failed; the message carries the config hash."""


def build_pools_for(cfg: ExperimentConfig, seed: int) -> scm.Pools:
    b = cfg.budget
    return scm.build_pools(cfg.scm.to_scm_config(seed), n_source_labeled_per_env=b.n_source_labeled,
                           pool_size=b.pool_size, target_env=cfg.scm.target_env,
                           target_fraction=b.target_fraction, eval_size=b.eval_size)


def run_method(cfg: ExperimentConfig, pools: scm.Pools, seed: int):
    """Run ``cfg.method`` on prebuilt pools; returns an object with ``logs`` and ``final_mse``."""
    if cfg.method == "pqal":
        return run_pqal(cfg, pools, PoolOracle(pools.pool), seed=seed)
    if cfg.method == baselines.PROXY_DA:
        return baselines.run_proxy_da(pools, PoolOracle(pools.pool), cfg, seed=seed)
    if cfg.method == baselines.FEW_SHOT_ERM:
        return baselines.run_few_shot_erm(pools, PoolOracle(pools.pool), cfg, seed=seed)
    if cfg.method == baselines.ORACLE:
        return baselines.run_oracle(pools, cfg, seed=seed)
    raise InputError(f"unknown method {cfg.method!r}")


def _base_extra(cfg):
    extra = {"regularization": asdict(cfg.regularization)}
    if cfg.method == baselines.FEW_SHOT_ERM:
        extra["note"] = baselines.FEW_SHOT_NOTE
    return extra


def _record(cfg, h, seed, rnd, name, value, **extra):
    e = _base_extra(cfg)
    e.update(extra)
    return ResultRecord(h, cfg.method, int(seed), rnd, name,
                        None if value is None else float(value), time.time(),
                        dataset=cfg.scm.dataset, shift_level=cfg.scm.shift_level,
                        acquisition=cfg.acquisition if cfg.method == "pqal" else "random",
                        extra=e)


def run_cell(cfg: ExperimentConfig, round_log_dir: Path | None = None) -> list:
    """All seeds of one single-run config."""
    h = cfg.config_hash()
    records = []
    for seed in cfg.seeds:
        try:
            pools = build_pools_for(cfg, seed)
            result = run_method(cfg, pools, seed)
        except Exception as exc:
            raise ExperimentError(f"config {h} seed {seed}: {type(exc).__name__}: {exc}") from exc
        for entry in result.logs:
            records.append(_record(cfg, h, seed, entry.round_index, ROUND_METRIC, entry.target_mse))
        last = result.logs[-1].round_index if result.logs else 0
        records.append(_record(cfg, h, seed, last, FINAL_METRIC, result.final_mse))
        if round_log_dir is not None:
            write_round_logs(result.logs, round_log_dir / f"rounds-{h}-seed{seed}.jsonl")
    return records


def run_experiment(cfg: ExperimentConfig, round_log_dir: Path | None = None) -> list:
    """Run every grid cell and seed; records come back in a deterministic order."""
    records = []
    for cell in cfg.cells():
        records.extend(run_cell(cell, round_log_dir))
    return records


def run_rank_experiment(cfg: ExperimentConfig) -> list:
    """Effective rank of stacked per-environment CMEs on d2 for each proxy bin count."""
    rk = cfg.rank
    h = cfg.config_hash()
    betas = {k: tuple(b) for k, b in enumerate(rk.source_betas)}
    betas[len(betas)] = tuple(rk.target_beta)
    kernels = cfg.kernels.kernel_set()
    records = []
    for seed in cfg.seeds:
        for bins in rk.bins:
            sc = scm.ScmConfig(dataset=scm.D2, beta_params_per_env=betas, frequency_B=int(bins),
                               sigma_w=cfg.scm.sigma_w, eta=cfg.scm.eta, sigma_x=cfg.scm.sigma_x,
                               seed=seed)
            samples = Samples.concat(
                scm.generate(sc, rk.n_per_env, e, scm.env_rng(seed, e, 0)) for e in sorted(betas))
            report = rank_diagnostic(samples, kernels, cfg.regularization.lambda_cme,
                                     rk.grid_size, rk.threshold, rk.resolvable_eta)
            rec = ResultRecord(h, "rank", int(seed), None, RANK_METRIC, float(report.effective_rank),
                               time.time(), dataset=scm.D2,
                               extra={"B": int(bins), "envs": len(betas),
                                      "resolvable_rank": report.resolvable_rank,
                                      "threshold": report.threshold_used,
                                      "eta": report.eta_used,
                                      "singular_values": [float(s) for s in report.singular_values]})
            records.append(rec)
    return records


def write_results(records, out_dir, configs=()) -> Path:
    """Append records to ``results.jsonl`` and store each config under its hash."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in configs:
        path = out / f"config-{c.config_hash()}.json"
        payload = {"format_version": FORMAT_VERSION, "config": c.to_dict()}
        path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    results = out / RESULTS_FILE
    with open(results, "a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    return results


def read_results(out_dir) -> list:
    path = Path(out_dir) / RESULTS_FILE
    if not path.exists():
        raise InputError(f"no {RESULTS_FILE} in {out_dir}")
    with open(path) as fh:
        return [ResultRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def _fmt(v):
    return EMPTY_CELL if v is None else f"{v:.6g}"


def _to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def table_cells(records, metric=FINAL_METRIC):
    """``{(method, shift_level): mean}`` over seeds, skipping missing values."""
    groups = {}
    for r in records:
        if r.metric_name == metric and r.metric_value is not None:
            groups.setdefault((r.method, r.shift_level), []).append(r.metric_value)
    return {k: float(np.mean(v)) for k, v in groups.items()}


def emit_table(records, metric=FINAL_METRIC) -> str:
    """Methods by shift level, cells hold the mean final MSE; missing cells stay empty."""
    if not records:
        raise InputError("no records")
    cells = table_cells(records, metric)
    methods = sorted({m for m, _ in cells}, key=lambda m: (METHODS.index(m) if m in METHODS else 99, m))
    levels = sorted({lvl for _, lvl in cells}, key=lambda v: (v is None, v if v is not None else 0))
    header = ["format_version=%d" % FORMAT_VERSION] + [
        "custom" if lvl is None else f"level_{lvl}" for lvl in levels]
    rows = [header]
    for m in methods:
        rows.append([m] + [_fmt(cells.get((m, lvl))) for lvl in levels])
    return _to_csv(rows)


def curve_series(records, metric=ROUND_METRIC, method="pqal"):
    """``{strategy: [(round, mean, lower, upper), ...]}`` with rounds ascending."""
    groups = {}
    for r in records:
        if r.metric_name == metric and r.metric_value is not None and r.method == method:
            groups.setdefault(r.acquisition, {}).setdefault(r.round, []).append(r.metric_value)
    out = {}
    for strategy in sorted(groups):
        series = []
        for rnd in sorted(groups[strategy]):
            s = summarize(groups[strategy][rnd])
            series.append((rnd, s.mean, s.lower, s.upper))
        out[strategy] = series
    return out


def emit_curve(records, metric=ROUND_METRIC, method="pqal") -> str:
    """One row per (strategy, round): mean and 95% band across seeds."""
    rows = [["format_version", "strategy", "round", "mean", "lower", "upper"]]
    for strategy, series in curve_series(records, metric, method).items():
        for rnd, mean, lo, hi in series:
            rows.append([FORMAT_VERSION, strategy, rnd, _fmt(mean), _fmt(lo), _fmt(hi)])
    return _to_csv(rows)
