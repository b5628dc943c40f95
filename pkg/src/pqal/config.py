"""Experiment configuration: TOML loading, defaults, validation, hashing.

An empty file yields the default desk-scale robustness run: Dataset 2, two
sources, 35 labeled samples per source, 5 queries per round (2 labeled + 3
proxy-only), 12 rounds.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import scm
from .acquisition import STRATEGIES
from .errors import ConfigError, InputError
from .kernelcore import KernelSet, KernelSpec

METHODS = ("pqal", "proxy-da", "few-shot-erm", "oracle")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ScmSection:
    dataset: str = scm.D2
    source_betas: tuple = scm.SOURCE_BETAS
    shift_level: int | None = 3
    target_beta: tuple | None = None
    B: int = 4
    sigma_w: float = 0.1
    eta: float = 0.05
    sigma_x: float = 0.05
    image_side: int = 12

    def resolved_target_beta(self):
        if self.target_beta is not None:
            return tuple(self.target_beta)
        presets = scm.SPRITES_SHIFT_BETAS if self.dataset == scm.D3 else scm.SHIFT_BETAS
        return presets[self.shift_level - 1]

    def to_scm_config(self, seed, B=None) -> scm.ScmConfig:
        betas = {k: tuple(b) for k, b in enumerate(self.source_betas)}
        betas[len(self.source_betas)] = self.resolved_target_beta()
        return scm.ScmConfig(dataset=self.dataset, beta_params_per_env=betas,
                             frequency_B=self.B if B is None else B, sigma_w=self.sigma_w,
                             eta=self.eta, sigma_x=self.sigma_x,
                             image_side=self.image_side, seed=seed)

    @property
    def target_env(self):
        return len(self.source_betas)


@dataclass(frozen=True)
class KernelSection:
    x_lengthscale: str | float = "median"
    w_lengthscale: str | float = "median"

    def kernel_set(self) -> KernelSet:
        def spec(v):
            return KernelSpec.rbf_median() if v == "median" else KernelSpec.rbf(float(v))

        return KernelSet(spec(self.x_lengthscale), KernelSpec.delta(), spec(self.w_lengthscale))


@dataclass(frozen=True)
class Regularization:
    lambda_cme: float = 1e-3
    lambda_brg: float = 1e-3
    lambda_tgt: float = 1.0
    lambda_sim: float = 1e-3
    lambda_reg: float = 1e-2
    lambda_erm: float = 1e-3
    rpx_ridge: float = 1.0


@dataclass(frozen=True)
class Budget:
    rounds: int = 12
    v_p: int = 3
    v_lb: int = 2
    n_source_labeled: int = 35
    pool_size: int = 200
    target_fraction: float = 1.0
    eval_size: int = 500
    stage_fraction: float = 0.5


@dataclass(frozen=True)
class RankSection:
    bins: tuple = (1, 2, 4, 8)
    source_betas: tuple = scm.RANK_SOURCE_BETAS[:2]
    target_beta: tuple = scm.RANK_TARGET_BETA
    n_per_env: int = 45
    grid_size: int = 32
    threshold: float = 1e-2
    resolvable_eta: float = 0.05


@dataclass(frozen=True)
class GridSection:
    """Optional expansion of one file into several run cells; empty lists mean no expansion."""

    methods: tuple = ()
    shift_levels: tuple = ()
    acquisitions: tuple = ()

    @property
    def is_empty(self):
        return not (self.methods or self.shift_levels or self.acquisitions)


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "pqal"
    acquisition: str = "cme-uncertainty"
    seeds: tuple = (0,)
    scm: ScmSection = field(default_factory=ScmSection)
    kernels: KernelSection = field(default_factory=KernelSection)
    regularization: Regularization = field(default_factory=Regularization)
    budget: Budget = field(default_factory=Budget)
    rank: RankSection = field(default_factory=RankSection)
    grid: GridSection = field(default_factory=GridSection)

    def __post_init__(self):
        validate(self)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        return hash_config_dict(self.to_dict())

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def cells(self) -> list:
        """The single-run configs this file describes, grid expanded in a fixed order."""
        g = self.grid
        methods = g.methods or (self.method,)
        levels = g.shift_levels or (None,)
        acqs = g.acquisitions or (self.acquisition,)
        out = []
        for level in levels:
            s = self.scm if level is None else dataclasses.replace(
                self.scm, shift_level=int(level), target_beta=None)
            for method in methods:
                for a in acqs:
                    out.append(dataclasses.replace(self, method=method, acquisition=a, scm=s,
                                                   grid=GridSection()))
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def hash_config_dict(d) -> str:
    canon = json.dumps(_plain(d), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def validate(cfg: ExperimentConfig):
    s, b, r = cfg.scm, cfg.budget, cfg.regularization
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {cfg.method!r}")
    if cfg.acquisition not in STRATEGIES:
        raise ConfigError(f"acquisition must be one of {STRATEGIES}, got {cfg.acquisition!r}")
    if not cfg.seeds:
        raise ConfigError("seeds must list at least one seed")
    if s.dataset not in scm.DATASETS:
        raise ConfigError(f"scm.dataset must be one of {scm.DATASETS}")
    if s.target_beta is None and not (s.shift_level and 1 <= s.shift_level <= 5):
        raise ConfigError("scm.shift_level must be in 1..5 when scm.target_beta is not given")
    if not s.source_betas:
        raise ConfigError("scm.source_betas must list at least one source")
    if b.v_p < 0 or b.v_lb < 0:
        raise ConfigError("budget.v_p and budget.v_lb must be nonnegative")
    if b.v_p + b.v_lb <= 0:
        raise ConfigError("constraint v_p + v_lb > 0 violated")
    if b.rounds < 1:
        raise ConfigError("budget.rounds must be at least 1")
    if b.rounds * (b.v_p + b.v_lb) > b.pool_size:
        raise ConfigError("constraint rounds * (v_p + v_lb) <= pool_size violated")
    if b.n_source_labeled < 2:
        raise ConfigError("budget.n_source_labeled must be at least 2")
    for name in ("lambda_cme", "lambda_brg", "lambda_erm", "rpx_ridge"):
        if not getattr(r, name) > 0:
            raise ConfigError(f"regularization.{name} must be positive")
    for name in ("lambda_tgt", "lambda_sim", "lambda_reg"):
        if getattr(r, name) < 0:
            raise ConfigError(f"regularization.{name} must be nonnegative")
    g = cfg.grid
    for m in g.methods:
        if m not in METHODS:
            raise ConfigError(f"grid.methods entry {m!r} is not one of {METHODS}")
    for a in g.acquisitions:
        if a not in STRATEGIES:
            raise ConfigError(f"grid.acquisitions entry {a!r} is not one of {STRATEGIES}")
    for lvl in g.shift_levels:
        if not (isinstance(lvl, int) and 1 <= lvl <= 5):
            raise ConfigError("grid.shift_levels entries must be integers in 1..5")
    if any(int(bins) < 1 for bins in cfg.rank.bins):
        raise ConfigError("rank.bins entries must be positive")
    try:
        for seed in cfg.seeds[:1]:
            s.to_scm_config(seed)
    except InputError as exc:
        raise ConfigError(f"invalid scm section: {exc}") from None


_SECTIONS = {"scm": ScmSection, "kernels": KernelSection, "regularization": Regularization,
             "budget": Budget, "rank": RankSection, "grid": GridSection}


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, data, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(unknown)}")
    return cls(**{k: _tuplify(v) for k, v in data.items()})


def config_from_dict(data) -> ExperimentConfig:
    data = dict(data)
    data.pop("format_version", None)
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a section")
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = _tuplify(value)
    if "scm" in kwargs and "target_beta" in data["scm"] and "shift_level" not in data["scm"]:
        kwargs["scm"] = dataclasses.replace(kwargs["scm"], shift_level=None)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment file and apply defaults."""
    text = Path(path).read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def bundled_config_dir() -> Path:
    return Path(__file__).with_name("configs")
