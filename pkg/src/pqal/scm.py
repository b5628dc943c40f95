"""Seeded structural causal model simulators and pool construction.

Three generators share one latent-shift structure: a Beta-distributed
latent ``U`` whose parameters depend on the environment, a proxy ``W`` that
depends on ``U`` only (identically in every environment), and an outcome
driven by ``U`` and ``X``.

* ``d1-continuous``: W = sin(2 pi B U) + N(0, sigma_w^2), X ~ N(0, 1), Y = (2U - 1) X
* ``d2-discrete``:   W = floor(U B) (or a uniform bin with probability eta), Y = U^3 X
* ``d3-sprites``:    W as d1, X = rendered bar at angle 2 pi U plus pixel noise,
  Y = (2U - 1) * mean(X)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InputError
from .samples import Samples

D1 = "d1-continuous"
D2 = "d2-discrete"
D3 = "d3-sprites"
DATASETS = (D1, D2, D3)

# Beta presets used by the experiments
SOURCE_BETAS = ((2.0, 4.0), (2.1, 3.9))
SHIFT_BETAS = ((8.0, 12.0), (6.0, 6.0), (5.0, 3.333), (3.0, 1.286), (2.0, 0.5))
SPRITES_SHIFT_BETAS = ((10.0, 10.0), (15.0, 5.0), (25.0, 3.0), (40.0, 1.0), (60.0, 0.5))
RANK_SOURCE_BETAS = ((2.0, 10.0), (4.0, 8.0), (8.0, 4.0), (10.0, 2.0))
RANK_TARGET_BETA = (6.0, 6.0)


def beta_variance(a, b):
    return a * b / ((a + b + 1.0) * (a + b) ** 2)


@dataclass(frozen=True)
class ScmConfig:
    dataset: str = D2
    beta_params_per_env: Mapping[int, tuple] = field(
        default_factory=lambda: {0: SOURCE_BETAS[0], 1: SOURCE_BETAS[1], 2: SHIFT_BETAS[2]})
    frequency_B: int = 4
    sigma_w: float = 0.1
    eta: float = 0.05
    sigma_x: float = 0.05
    image_side: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise InputError(f"unknown dataset {self.dataset!r}")
        for env, (a, b) in self.beta_params_per_env.items():
            if not (a > 0 and b > 0):
                raise InputError(f"Beta parameters for env {env} must be positive")
        if int(self.frequency_B) < 1:
            raise InputError("B must be a positive integer")
        if self.sigma_w < 0 or self.sigma_x < 0:
            raise InputError("noise scales must be nonnegative")
        if not 0 <= self.eta <= 1:
            raise InputError("eta must lie in [0, 1]")
        if self.dataset == D3 and self.image_side < 8:
            raise InputError("image_side must be at least 8")

    def beta(self, env):
        try:
            return self.beta_params_per_env[env]
        except KeyError:
            raise InputError(f"no Beta parameters for environment {env}") from None


def env_rng(seed, env, stream):
    """Independent generator per (seed, environment, purpose)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(env) + 1, int(stream)]))


def sample_beta(a, b, rng, size=None):
    """Beta draw as ``G_a / (G_a + G_b)`` with independent unit-scale Gammas."""
    if not (a > 0 and b > 0):
        raise InputError(f"Beta parameters must be positive, got ({a}, {b})")
    ga = rng.gamma(a, 1.0, size)
    gb = rng.gamma(b, 1.0, size)
    return ga / (ga + gb)


def _latent(config, n, env, rng, u):
    if u is None:
        a, b = config.beta(env)
        return sample_beta(a, b, rng, n)
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (n,)).copy()
    if np.any((u < 0) | (u > 1)):
        raise InputError("forced latent values must lie in [0, 1]")
    return u


def _sine_proxy(config, u, rng):
    noise = rng.normal(0.0, 1.0, u.shape) * config.sigma_w
    return np.sin(2.0 * np.pi * config.frequency_B * u) + noise


def generate_dataset1(config: ScmConfig, n: int, env: int, rng=None, u=None) -> Samples:
    if config.dataset != D1:
        raise InputError("generate_dataset1 needs a d1-continuous config")
    rng = rng if rng is not None else env_rng(config.seed, env, 0)
    u = _latent(config, n, env, rng, u)
    w = _sine_proxy(config, u, rng)
    x = rng.normal(0.0, 1.0, n)
    y = (2.0 * u - 1.0) * x
    return Samples(x[:, None], np.full(n, env), w[:, None], y, u)


def discretize_proxy(u, bins):
    return np.minimum(np.floor(u * bins), bins - 1)


def generate_dataset2(config: ScmConfig, n: int, env: int, rng=None, u=None) -> Samples:
    if config.dataset != D2:
        raise InputError("generate_dataset2 needs a d2-discrete config")
    rng = rng if rng is not None else env_rng(config.seed, env, 0)
    bins = int(config.frequency_B)
    u = _latent(config, n, env, rng, u)
    w = discretize_proxy(u, bins)
    corrupt = rng.random(n) < config.eta
    w = np.where(corrupt, rng.integers(0, bins, n), w).astype(np.float64)
    x = rng.normal(0.0, 1.0, n)
    y = u**3 * x
    return Samples(x[:, None], np.full(n, env), w[:, None], y, u)


def render_bar(angle, side, half_length=None, width=0.75):
    """Grayscale image of a centered line segment at ``angle`` (radians).

    Intensity falls off as a Gaussian in the distance to the segment, so the
    image is a smooth function of the angle and is identical for ``angle``
    and ``angle + pi``.
    """
    if half_length is None:
        half_length = 0.38 * side
    c = (side - 1) / 2.0
    rows, cols = np.mgrid[0:side, 0:side]
    px = cols - c
    py = c - rows
    dx, dy = np.cos(angle), np.sin(angle)
    t = np.clip(px * dx + py * dy, -half_length, half_length)
    dist_sq = (px - t * dx) ** 2 + (py - t * dy) ** 2
    return np.exp(-dist_sq / (2.0 * width**2))


def generate_sprites_surrogate(config: ScmConfig, n: int, env: int, rng=None, u=None) -> Samples:
    if config.dataset != D3:
        raise InputError("generate_sprites_surrogate needs a d3-sprites config")
    rng = rng if rng is not None else env_rng(config.seed, env, 0)
    side = int(config.image_side)
    u = _latent(config, n, env, rng, u)
    w = _sine_proxy(config, u, rng)
    images = np.stack([render_bar(2.0 * np.pi * ui, side).ravel() for ui in u])
    x = images + rng.normal(0.0, 1.0, images.shape) * config.sigma_x
    y = (2.0 * u - 1.0) * x.mean(axis=1)
    return Samples(x, np.full(n, env), w[:, None], y, u)


GENERATORS = {D1: generate_dataset1, D2: generate_dataset2, D3: generate_sprites_surrogate}


def generate(config: ScmConfig, n: int, env: int, rng=None, u=None) -> Samples:
    return GENERATORS[config.dataset](config, n, env, rng=rng, u=u)


@dataclass(frozen=True)
class Pools:
    """Source labeled set, candidate pool (hidden answers retained) and held-out target set."""

    labeled: Samples
    pool: Samples
    heldout: Samples
    target_env: int
    source_envs: tuple

    @property
    def visible_pool(self) -> Samples:
        return self.pool.without_hidden()


def build_pools(config: ScmConfig, n_source_labeled_per_env: int = 35, pool_size: int = 200,
                target_env: int | None = None, target_fraction: float = 1.0,
                eval_size: int = 500) -> Pools:
    """Draw the labeled source set, the candidate pool and a held-out target set.

    ``target_fraction`` of the pool comes from the target environment; the
    rest is spread evenly over the sources. Each (environment, role) pair has
    its own random stream, so pools are reproducible from ``config.seed``.
    """
    envs = sorted(config.beta_params_per_env)
    if target_env is None:
        target_env = envs[-1]
    if target_env not in config.beta_params_per_env:
        raise InputError(f"target environment {target_env} has no Beta parameters")
    sources = tuple(e for e in envs if e != target_env)
    if n_source_labeled_per_env < 1 or pool_size < 0 or eval_size < 0:
        raise InputError("sample counts must be positive")
    if not sources:
        raise InputError("need at least one source environment")
    if not 0 <= target_fraction <= 1:
        raise InputError("target_fraction must lie in [0, 1]")

    labeled = Samples.concat(
        generate(config, n_source_labeled_per_env, e, env_rng(config.seed, e, 0)) for e in sources)

    n_target = int(round(pool_size * target_fraction))
    counts = {target_env: n_target}
    rest = pool_size - n_target
    for k, e in enumerate(sources):
        counts[e] = rest // len(sources) + (1 if k < rest % len(sources) else 0)
    parts = [generate(config, counts[e], e, env_rng(config.seed, e, 1))
             for e in envs if counts.get(e, 0) > 0]
    if parts:
        pool = Samples.concat(parts)
        order = env_rng(config.seed, -1, 3).permutation(len(pool))
        pool = pool.subset(order)
    else:
        pool = generate(config, 0, target_env, env_rng(config.seed, target_env, 1))
    heldout = generate(config, eval_size, target_env, env_rng(config.seed, target_env, 2))
    return Pools(labeled, pool, heldout, target_env, sources)
