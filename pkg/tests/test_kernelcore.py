import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pqal import _backend
from pqal.errors import InputError, NumericalError
from pqal.kernelcore import (KernelSet, KernelSpec, RidgeFactor, cross_gram, face_splitting, gram,
                             hadamard, kernel_eval, khatri_rao_columnwise, median_heuristic,
                             ridge_solve)

RBF1 = KernelSpec.rbf(1.0)
DELTA = KernelSpec.delta()

small_points = hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 3)),
                          elements=st.floats(-3, 3, allow_nan=False))


def test_kernel_eval_examples():
    assert kernel_eval(RBF1, [0.3, 1.0], [0.3, 1.0]) == 1.0
    assert kernel_eval(DELTA, [2], [3]) == 0.0
    assert kernel_eval(DELTA, [2], [2]) == 1.0
    assert kernel_eval(RBF1, [0.0], [1.0]) == pytest.approx(math.exp(-0.5), abs=1e-15)


def test_kernel_eval_dimension_mismatch():
    with pytest.raises(InputError):
        kernel_eval(RBF1, [0.0, 1.0], [1.0])


def test_rbf_needs_positive_lengthscale():
    with pytest.raises(InputError):
        KernelSpec.rbf(0.0)


def test_unresolved_median_kernel_refuses_evaluation():
    with pytest.raises(InputError):
        gram(KernelSpec.rbf_median(), [[0.0], [1.0]])


def test_gram_examples():
    assert np.array_equal(gram(RBF1, [[0.5]]), [[1.0]])
    k = gram(RBF1, [[1.0], [1.0]])
    assert np.allclose(k, 1.0)
    assert np.linalg.eigvalsh(k)[0] == pytest.approx(0.0, abs=1e-12)
    pts = np.array([[0.0], [0.4], [2.0]])
    spec = KernelSpec.rbf_median().resolve(pts)
    k = gram(spec, pts)
    assert np.allclose(k, k.T, atol=1e-10)
    assert np.linalg.eigvalsh(k)[0] >= -1e-8


def test_gram_empty_raises():
    with pytest.raises(InputError):
        gram(RBF1, np.zeros((0, 2)))
    with pytest.raises(InputError):
        cross_gram(RBF1, np.zeros((0, 1)), [[1.0]])


def test_cross_gram_matches_pointwise_loop(rng):
    rows, cols = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    for spec in (KernelSpec.rbf(0.8), DELTA):
        if spec is DELTA:
            rows, cols = np.array([[1.0], [2.0]]), np.array([[2.0], [1.0], [3.0]])
        k = cross_gram(spec, rows, cols)
        loop = np.array([[kernel_eval(spec, a, b) for b in cols] for a in rows])
        assert np.max(np.abs(k - loop)) <= 1e-12
    pts = rng.normal(size=(4, 2))
    assert np.allclose(cross_gram(RBF1, pts, pts), gram(RBF1, pts), atol=1e-15)
    assert np.array_equal(cross_gram(RBF1, [[0.2]], [[0.2]]), [[1.0]])


@given(small_points, st.floats(0.1, 5.0))
def test_gram_symmetric_psd(points, ls):
    k = gram(KernelSpec.rbf(ls), points)
    assert np.max(np.abs(k - k.T)) <= 1e-10
    assert np.linalg.eigvalsh(k)[0] >= -1e-8


@given(small_points, st.integers(0, 5))
def test_kernel_eval_symmetric(points, seed):
    r = np.random.default_rng(seed)
    a, b = points[0], r.normal(size=points.shape[1])
    assert kernel_eval(RBF1, a, b) == kernel_eval(RBF1, b, a)
    assert kernel_eval(DELTA, a, b) == kernel_eval(DELTA, b, a)


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_hadamard_of_grams_is_psd(n, seed):
    r = np.random.default_rng(seed)
    p, q = r.normal(size=(n, 2)), r.integers(0, 3, size=(n, 1)).astype(float)
    prod = hadamard(gram(KernelSpec.rbf(r.uniform(0.2, 3)), p), gram(DELTA, q))
    assert np.linalg.eigvalsh(prod)[0] >= -1e-8


def test_hadamard_examples(rng):
    a = rng.normal(size=(4, 4))
    assert np.array_equal(hadamard(a, np.eye(4)), np.diag(np.diag(a)))
    assert np.array_equal(hadamard(a, np.ones((4, 4))), a)
    x, y = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    assert np.linalg.eigvalsh(hadamard(x @ x.T, y @ y.T))[0] >= -1e-8
    with pytest.raises(InputError):
        hadamard(a, np.ones((3, 4)))


def _kron_loop(a, b):
    return np.column_stack([np.kron(a[:, j], b[:, j]) for j in range(a.shape[1])])


def test_khatri_rao_examples(rng):
    out = khatri_rao_columnwise(np.eye(2), np.eye(2))
    assert np.array_equal(out, np.column_stack([np.kron([1, 0], [1, 0]), np.kron([0, 1], [0, 1])]))
    u, v = rng.normal(size=(3, 1)), rng.normal(size=(2, 1))
    assert np.allclose(khatri_rao_columnwise(u, v), np.kron(u, v))
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    assert np.allclose(khatri_rao_columnwise(a, b), _kron_loop(a, b), atol=1e-15)
    with pytest.raises(InputError):
        khatri_rao_columnwise(rng.normal(size=(2, 3)), rng.normal(size=(2, 2)))


@given(st.integers(2, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_khatri_rao_matches_kron_loop(ncols, m, p, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(m, ncols)), r.normal(size=(p, ncols))
    assert np.allclose(khatri_rao_columnwise(a, b), _kron_loop(a, b), rtol=0, atol=1e-14)
    assert np.allclose(face_splitting(a.T, b.T), _kron_loop(a, b).T, rtol=0, atol=1e-14)


def test_ridge_examples(rng):
    v = rng.normal(size=4)
    assert np.allclose(ridge_solve(np.zeros((4, 4)), 1.0, v), v)
    assert np.allclose(ridge_solve(np.eye(4), 1.0, v), v / 2)
    m = rng.normal(size=(5, 5))
    spd = m @ m.T + 0.1 * np.eye(5)
    sol = ridge_solve(spd, 0.5, v[:4].tolist() + [1.0])
    assert np.allclose((spd + 0.5 * np.eye(5)) @ sol, v[:4].tolist() + [1.0], atol=1e-10)


@given(st.integers(1, 200), st.integers(0, 10_000))
def test_ridge_residual_small(n, seed):
    r = np.random.default_rng(seed)
    m = r.normal(size=(n, n))
    a = m @ m.T / n
    rhs = r.normal(size=n)
    lam = 10 ** r.uniform(-6, 0)
    x = ridge_solve(a, lam, rhs)
    res = (a + lam * np.eye(n)) @ x - rhs
    assert np.linalg.norm(res) <= 1e-8 * max(1.0, np.linalg.norm(rhs)) * max(1.0, 1 / lam) ** 0.5


def test_ridge_jitter_rescues_semidefinite_delta_block():
    k = gram(DELTA, [[0.0], [0.0], [1.0]])
    f = RidgeFactor(k, 0.0)
    assert f.jitter > 0
    assert np.all(np.isfinite(f.solve(np.ones(3))))


def test_ridge_indefinite_raises_numerical_error():
    with pytest.raises(NumericalError, match="min eigenvalue"):
        RidgeFactor(np.diag([1.0, -1.0]), 0.0)


def test_median_heuristic_examples():
    assert median_heuristic([0.0, 1.0]) == 1.0
    assert median_heuristic([0.0, 1.0, 2.0]) == 1.0
    assert median_heuristic([3.0, 3.0, 3.0]) == 1.0
    with pytest.raises(InputError):
        median_heuristic([1.0])


def test_kernel_set_resolves_median_bandwidths(rng):
    from pqal.samples import Samples
    s = Samples(rng.normal(size=(10, 1)), np.zeros(10, dtype=int), rng.normal(size=(10, 1)))
    ks = KernelSet().resolve(s)
    assert ks.is_resolved
    assert ks.x.lengthscale == pytest.approx(median_heuristic(s.x))
    assert ks.w.lengthscale == pytest.approx(median_heuristic(s.w))


@pytest.mark.skipif("compiled" not in _backend.implementations(), reason="extension not built")
@given(small_points, small_points, st.floats(0.1, 4.0))
def test_backends_agree(a, b, ls):
    impls = _backend.implementations()
    py, c = impls["python"], impls["compiled"]
    if a.shape[1] != b.shape[1]:
        b = np.resize(b, (b.shape[0], a.shape[1]))
    for name in ("rbf_cross_gram",):
        assert np.allclose(getattr(py, name)(a, b, ls), getattr(c, name)(np.ascontiguousarray(a),
                           np.ascontiguousarray(b), ls), rtol=0, atol=1e-12)
    assert np.allclose(py.rbf_gram(a, ls), c.rbf_gram(np.ascontiguousarray(a), ls), atol=1e-12)
    ia, ib = np.round(a), np.round(b)
    assert np.array_equal(py.delta_cross_gram(ia, ib), c.delta_cross_gram(ia, ib))
    ca, cb = np.ascontiguousarray(a.T), np.ascontiguousarray(np.resize(b.T, a.T.shape))
    assert np.allclose(py.khatri_rao_columnwise(ca, cb), c.khatri_rao_columnwise(ca, cb), atol=1e-15)
    fa, fb = np.ascontiguousarray(a), np.ascontiguousarray(np.resize(b, a.shape))
    assert np.allclose(py.face_splitting(fa, fb), c.face_splitting(fa, fb), atol=1e-15)
    if a.shape[0] >= 2:
        assert np.allclose(py.pairwise_distances(fa), c.pairwise_distances(fa), atol=1e-12)


def test_backend_name_reported():
    assert _backend.NAME in ("compiled", "python")
