import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pqal.cme import (embed_weights, embed_weights_many, embedding_gram_column, fit_cme,
                      fit_cme_env, mean_embedding_evaluations, posterior_variance,
                      posterior_variance_many)
from pqal.errors import EnvironmentEmptyError, InputError
from pqal.kernelcore import KernelSet, KernelSpec, cross_gram, gram
from pqal.samples import Samples

KS = KernelSet(KernelSpec.rbf(0.7), KernelSpec.delta(), KernelSpec.rbf(0.9))


def random_samples(r, m, n_env=2, dim=1):
    return Samples(r.normal(size=(m, dim)), r.integers(0, n_env, m), r.normal(size=(m, 1)))


def iterative_cme_weights(s, kernels, lam, queries_x, queries_z, steps=60_000):
    """Functional gradient descent on the ridge objective for every unit output.

    The CME ridge problem decouples over outputs: the weight b_k(x, z) is the
    prediction at (x, z) of a kernel ridge fit to the k-th unit vector. The
    iteration c <- c - eta * ((K c - Y) / m + lam * c) converges to the
    ridge minimizer without any matrix factorization.
    """
    m = len(s)
    k = gram(kernels.z, s.z[:, None].astype(float)) * gram(kernels.x, s.x)
    eta = 1.0 / (np.linalg.norm(k, 2) / m + lam)
    c = np.zeros((m, m))
    target = np.eye(m)
    for _ in range(steps):
        grad = (k @ c - target) / m + lam * c
        c -= eta * grad
        if np.max(np.abs(grad)) < 1e-13:
            break
    kq = (cross_gram(kernels.z, queries_z[:, None].astype(float), s.z[:, None].astype(float))
          * cross_gram(kernels.x, queries_x, s.x))
    return (kq @ c).T


def test_single_anchor_weight():
    s = Samples([[0.3]], [0], [[1.2]])
    lam = 0.25
    model = fit_cme(s, KS, lam)
    assert embed_weights(model, [0.3], 0).weights == pytest.approx([1 / (1 + lam)])
    tiny = fit_cme(s, KS, 1e-12)
    assert embed_weights(tiny, [0.3], 0).weights[0] == pytest.approx(1.0, abs=1e-9)
    assert mean_embedding_evaluations(tiny, [[0.3]], 0, [[1.2]])[0, 0] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_closed_form_matches_iterative_ridge(seed):
    r = np.random.default_rng(seed)
    m = int(r.integers(2, 11))
    s = random_samples(r, m)
    lam = 0.05
    model = fit_cme(s, KS, lam)
    qx, qz = r.normal(size=(4, 1)), r.integers(0, 2, 4)
    oracle = iterative_cme_weights(s, KS, lam, qx, qz)
    assert np.max(np.abs(embed_weights_many(model, qx, qz) - oracle)) <= 1e-5


def test_fit_requires_proxies_and_positive_lambda():
    with pytest.raises(InputError):
        fit_cme(Samples([[0.0]], [0]), KS, 1e-3)
    with pytest.raises(InputError):
        fit_cme(Samples([[0.0]], [0], [[0.0]]), KS, 0.0)


def test_env_refit_filters_and_errors():
    r = np.random.default_rng(1)
    s = random_samples(r, 12)
    model = fit_cme_env(s, 1, KS, 1e-3)
    assert model.size == int(np.sum(s.z == 1))
    assert np.all(model.anchor_environments == 1)
    with pytest.raises(EnvironmentEmptyError):
        fit_cme_env(s, 7, KS, 1e-3)
    one = Samples([[0.5], [2.0]], [0, 1], [[0.0], [1.0]])
    lam = 0.1
    m1 = fit_cme_env(one, 1, KS, lam)
    assert embed_weights(m1, [2.0], 1).weights == pytest.approx([1 / (1 + lam)])


def test_duplicate_anchor_concentrates_weight():
    x = np.array([[0.0], [1.0], [2.0]])
    base = Samples(x, [0, 0, 0], [[0.0], [1.0], [2.0]])
    dup = Samples(np.vstack([x, [[1.0]]]), [0, 0, 0, 0], [[0.0], [1.0], [2.0], [1.0]])
    b = embed_weights(fit_cme(dup, KS, 1e-2), [1.0], 0).weights
    assert b[1] + b[3] > max(b[0], b[2])
    assert b[1] + b[3] > embed_weights(fit_cme(base, KS, 1e-2), [1.0], 0).weights[0]


def test_unknown_environment_gives_zero_weights():
    s = Samples([[0.0], [1.0]], [0, 0], [[0.0], [1.0]])
    assert np.array_equal(embed_weights(fit_cme(s, KS, 1e-3), [0.5], 3).weights, [0.0, 0.0])


def test_weights_solve_defining_system():
    r = np.random.default_rng(3)
    s = random_samples(r, 4)
    lam = 1e-3
    model = fit_cme(s, KS, lam)
    a = gram(KS.z, s.z[:, None].astype(float)) * gram(KS.x, s.x) + lam * 4 * np.eye(4)
    x, z = r.normal(size=1), 1
    rhs = (cross_gram(KS.z, s.z[:, None].astype(float), [[z]]) * cross_gram(KS.x, s.x, [x]))[:, 0]
    b = embed_weights(model, x, z).weights
    assert np.linalg.norm(a @ b - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))


@given(st.integers(1, 10), st.integers(0, 10_000), st.floats(1e-6, 1.0))
def test_weights_relative_residual(m, seed, lam):
    r = np.random.default_rng(seed)
    s = random_samples(r, m, n_env=3, dim=2)
    model = fit_cme(s, KS, lam)
    qx, qz = r.normal(size=(3, 2)), r.integers(0, 3, 3)
    b = embed_weights_many(model, qx, qz)
    a = gram(KS.z, s.z[:, None].astype(float)) * gram(KS.x, s.x) + lam * m * np.eye(m)
    rhs = cross_gram(KS.z, s.z[:, None].astype(float), qz[:, None].astype(float)) * cross_gram(KS.x, s.x, qx)
    assert np.linalg.norm(a @ b - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))


def test_embedding_gram_column():
    r = np.random.default_rng(4)
    s = random_samples(r, 5)
    model = fit_cme(s, KS, 1e-3)
    assert np.allclose(embedding_gram_column(model, s.w), gram(KS.w, s.w))
    col = embedding_gram_column(model, s.w[:1])
    assert col[0, 0] == 1.0
    pts = r.normal(size=(3, 1))
    loop = np.array([[np.exp(-(a - b) ** 2 / (2 * 0.81)) for b in pts[:, 0]] for a in s.w[:, 0]])
    assert np.allclose(embedding_gram_column(model, pts), loop, atol=1e-12)
    with pytest.raises(InputError):
        embedding_gram_column(model, np.zeros((2, 3)))


def test_posterior_variance_examples():
    assert posterior_variance(None, [0.2], 0, KS) == 1.0
    lam = 0.3
    model = fit_cme(Samples([[0.2]], [0], [[0.0]]), KS, lam)
    assert posterior_variance(model, [0.2], 0) == pytest.approx(lam / (1 + lam), abs=1e-12)
    tight = fit_cme(Samples([[0.2], [1.5]], [0, 1], [[0.0], [1.0]]), KS, 1e-12)
    assert posterior_variance(tight, [0.2], 0) <= 1e-8
    assert posterior_variance(tight, [1.5], 1) <= 1e-8


def test_non_finite_query_rejected():
    model = fit_cme(Samples([[0.2]], [0], [[0.0]]), KS, 1e-3)
    with pytest.raises(InputError):
        embed_weights(model, [np.nan], 0)
    with pytest.raises(InputError):
        embed_weights(model, [0.0, 1.0], 0)


@given(st.integers(1, 10), st.integers(0, 10_000), st.floats(1e-8, 1.0))
def test_posterior_variance_nonnegative(m, seed, lam):
    r = np.random.default_rng(seed)
    s = random_samples(r, m)
    model = fit_cme(s, KS, lam)
    qx = np.vstack([s.x, r.normal(size=(3, 1))])
    qz = np.concatenate([s.z, r.integers(0, 2, 3)])
    raw = posterior_variance_many(model, qx, qz, clamp=False)
    assert np.all(raw >= -1e-8)
    assert np.all(posterior_variance_many(model, qx, qz) >= 0)
    assert np.all(posterior_variance_many(model, qx, qz) <= 1.0 + 1e-12)


def _augment(seed):
    r = np.random.default_rng(seed)
    s = random_samples(r, int(r.integers(1, 8)), n_env=1)
    return s, Samples.concat([s, random_samples(r, 1, n_env=1)]), r.normal(size=1)


@given(st.integers(0, 10_000), st.floats(1e-4, 1.0))
def test_posterior_variance_non_increasing_at_fixed_ridge(seed, ridge):
    # lambda * n held fixed: the standard monotone-information property
    s, bigger, q = _augment(seed)
    before = posterior_variance(fit_cme(s, KS, ridge / len(s)), q, 0)
    after = posterior_variance(fit_cme(bigger, KS, ridge / len(bigger)), q, 0)
    assert after <= before + 1e-10


@given(st.integers(0, 10_000), st.floats(1e-6, 1.0))
def test_posterior_variance_increase_bounded_with_count_scaled_ridge(seed, lam):
    # (K + (n+1) lam I)^{-1} >= n/(n+1) (K + n lam I)^{-1}, so one added anchor
    # can raise the variance by at most (prior - before) / (n + 1)
    s, bigger, q = _augment(seed)
    n = len(s)
    before = posterior_variance(fit_cme(s, KS, lam), q, 0)
    after = posterior_variance(fit_cme(bigger, KS, lam), q, 0)
    assert after <= before + (1.0 - before) / (n + 1) + 1e-10


@pytest.mark.xfail(strict=True, reason="with the count-scaled ridge lambda*n an added anchor "
                   "also raises the noise level, so variance can grow (e.g. seed 2)")
def test_posterior_variance_literal_monotonicity_with_count_scaled_ridge():
    violations = []
    for seed in range(100):
        s, bigger, q = _augment(seed)
        before = posterior_variance(fit_cme(s, KS, 1e-3), q, 0)
        after = posterior_variance(fit_cme(bigger, KS, 1e-3), q, 0)
        if after > before + 1e-10:
            violations.append((seed, before, after))
    assert not violations, violations[:3]


@given(st.integers(0, 10_000))
def test_posterior_variance_ignores_other_environments(seed):
    r = np.random.default_rng(seed)
    s = random_samples(r, 8, n_env=3)
    target = 0
    mine = s.filter_env(target)
    others = Samples.concat([s.filter_env(1), s.filter_env(2)])
    if len(others) < 2:
        return
    perm = r.permutation(len(others))
    moved = Samples(others.x[perm] + r.normal(size=others.x.shape), others.z[perm], others.w[perm])
    q = r.normal(size=(3, 1))
    a = posterior_variance_many(fit_cme(Samples.concat([mine, others]), KS, 1e-3), q, target)
    b = posterior_variance_many(fit_cme(Samples.concat([mine, moved]), KS, 1e-3), q, target)
    assert np.allclose(a, b, atol=1e-10)
