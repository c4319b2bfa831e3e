import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvskopt.errors import DataError, DimensionError, ResourceLimitError
from mvskopt.moments import (FeasibleSet, MomentSet, MvskSpec, ReturnsMatrix, crra_lambdas,
                             estimate_moments, grad_phi3, grad_phi4, hess_ncvx, hess_phi3,
                             hess_phi4, moments_footprint, mvsk_objective, mvsk_value,
                             portfolio_moments)

from conftest import random_feasible, synthetic_moments


def naive_moments(X):
    T, N = X.shape
    mu = X.mean(axis=0)
    Xc = X - mu
    S = np.zeros((N, N))
    P = np.zeros((N, N, N))
    K = np.zeros((N, N, N, N))
    for i, j in itertools.product(range(N), repeat=2):
        S[i, j] = sum(Xc[t, i] * Xc[t, j] for t in range(T)) / T
    for i, j, k in itertools.product(range(N), repeat=3):
        P[i, j, k] = sum(Xc[t, i] * Xc[t, j] * Xc[t, k] for t in range(T)) / T
    for i, j, k, l in itertools.product(range(N), repeat=4):
        K[i, j, k, l] = sum(Xc[t, i] * Xc[t, j] * Xc[t, k] * Xc[t, l] for t in range(T)) / T
    return mu, S, P, K


def fd_grad(f, w, h=1e-5):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def test_constant_returns_give_zero_central_moments():
    m = estimate_moments(np.full((6, 1), 0.3))
    assert m.mu[0] == pytest.approx(0.3)
    assert np.all(m.sigma == 0) and np.all(m.phi == 0) and np.all(m.psi == 0)


def test_three_point_returns_by_hand():
    m = estimate_moments(np.array([[-1.0], [0.0], [1.0]]))
    assert m.mu[0] == 0
    assert m.sigma[0, 0] == pytest.approx(2 / 3, abs=1e-15)
    assert m.phi[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert m.psi[0, 0] == pytest.approx(2 / 3, abs=1e-15)


@pytest.mark.parametrize("n", [2, 3])
def test_matches_naive_loops(n):
    X = np.random.default_rng(n).normal(size=(50, n))
    m = estimate_moments(X)
    mu, S, P, K = naive_moments(X)
    for got, want in ((m.mu, mu), (m.sigma, S), (m.phi_tensor(), P), (m.psi_tensor(), K)):
        assert np.allclose(got, want, rtol=1e-12, atol=1e-15)


def test_supersymmetry_and_psd(rng):
    m = synthetic_moments(6, 3)
    P, K = m.phi_tensor(), m.psi_tensor()
    for _ in range(200):
        idx = tuple(rng.integers(0, 6, size=4))
        for perm in itertools.permutations(range(4)):
            assert K[tuple(idx[p] for p in perm)] == K[idx]
        for perm in itertools.permutations(range(3)):
            assert P[tuple(idx[p] for p in perm)] == P[idx[:3]]
    assert np.array_equal(m.sigma, m.sigma.T)
    assert np.linalg.eigvalsh(m.sigma).min() >= -1e-10 * np.abs(m.sigma).max()


def test_row_permutation_leaves_moments_unchanged():
    X = np.random.default_rng(0).normal(size=(40, 3))
    a = estimate_moments(X)
    b = estimate_moments(X[::-1])
    assert np.allclose(a.psi, b.psi, rtol=1e-12, atol=1e-15)


def test_unit_vector_contractions():
    m = synthetic_moments(4, 1)
    P, K = m.phi_tensor(), m.psi_tensor()
    for i in range(4):
        e = np.eye(4)[i]
        phi = portfolio_moments(e, m)
        assert phi == pytest.approx((m.mu[i], m.sigma[i, i], P[i, i, i], K[i, i, i, i]), rel=1e-12)


def test_identity_covariance_quadratic_form():
    N = 5
    m = MomentSet(np.zeros(N), np.eye(N), np.zeros((N, N * N)), np.zeros((N, N ** 3)))
    assert portfolio_moments(np.full(N, 1 / N), m)[1] == pytest.approx(1 / N)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 6))
def test_portfolio_moments_equal_sample_powers(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, n)) * 0.02
    m = estimate_moments(X)
    w = rng.normal(size=n)
    p = (X - X.mean(axis=0)) @ w
    want = (float(X.mean(axis=0) @ w), np.mean(p ** 2), np.mean(p ** 3), np.mean(p ** 4))
    got = portfolio_moments(w, m)
    assert got[0] == pytest.approx(want[0], rel=1e-10, abs=1e-16)
    for q in (1, 2, 3):
        assert got[q] == pytest.approx(want[q], rel=1e-10, abs=1e-20)


def test_zero_tensors_give_zero_derivatives():
    N = 3
    m = MomentSet(np.ones(N), np.eye(N), np.zeros((N, N * N)), np.zeros((N, N ** 3)))
    w = np.array([0.2, 0.3, 0.5])
    assert np.all(grad_phi3(w, m) == 0)
    assert np.all(hess_phi4(w, m) == 0)


@pytest.mark.parametrize("seed", range(3))
def test_gradients_and_hessians_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = estimate_moments(rng.normal(size=(50, 6)))
    w = rng.normal(size=6)
    g3 = fd_grad(lambda v: portfolio_moments(v, m)[2], w)
    g4 = fd_grad(lambda v: portfolio_moments(v, m)[3], w)
    assert np.allclose(grad_phi3(w, m), g3, rtol=1e-6, atol=1e-6 * np.abs(g3).max())
    assert np.allclose(grad_phi4(w, m), g4, rtol=1e-6, atol=1e-6 * np.abs(g4).max())
    H3 = np.array([fd_grad(lambda v: grad_phi3(v, m)[i], w) for i in range(6)])
    H4 = np.array([fd_grad(lambda v: grad_phi4(v, m)[i], w) for i in range(6)])
    assert np.allclose(hess_phi3(w, m), H3, rtol=1e-5, atol=1e-5 * np.abs(H3).max())
    assert np.allclose(hess_phi4(w, m), H4, rtol=1e-5, atol=1e-5 * np.abs(H4).max())


def test_homogeneity_relations():
    rng = np.random.default_rng(4)
    m = estimate_moments(rng.normal(size=(50, 7)))
    w = rng.normal(size=7)
    H3, H4 = hess_phi3(w, m), hess_phi4(w, m)
    assert np.allclose(grad_phi3(w, m), H3 @ w / 2, rtol=1e-12, atol=0)
    assert np.allclose(grad_phi4(w, m), H4 @ w / 3, rtol=1e-12, atol=0)


def test_n2_skewness_hessian_naive_formula():
    m = estimate_moments(np.random.default_rng(9).normal(size=(20, 2)))
    P = m.phi_tensor()
    w = np.array([0.7, 0.3])
    H = np.array([[6 * sum(P[i, j, k] * w[k] for k in range(2)) for j in range(2)] for i in range(2)])
    assert np.allclose(hess_phi3(w, m), H, rtol=1e-13)


def test_objective_special_cases():
    m = synthetic_moments(4, 2)
    w = np.array([0.1, 0.2, 0.3, 0.4])
    obj = mvsk_objective(w, m, MvskSpec((1, 0, 0, 0)))
    assert obj.f == pytest.approx(-w @ m.mu, rel=1e-14)
    obj = mvsk_objective(w, m, MvskSpec((1, 2, 0, 0)))
    assert obj.f_ncvx == 0 and np.all(obj.grad_ncvx == 0)


def test_objective_gradient_and_value_agree():
    rng = np.random.default_rng(5)
    m = estimate_moments(rng.normal(size=(40, 5)))
    spec = crra_lambdas(10)
    w = rng.normal(size=5)
    obj = mvsk_objective(w, m, spec)
    g = fd_grad(lambda v: mvsk_value(v, m, spec), w)
    assert np.allclose(obj.grad, g, rtol=1e-6, atol=1e-6 * np.abs(g).max())
    assert obj.f == pytest.approx(mvsk_value(w, m, spec), rel=1e-12)
    assert obj.f == pytest.approx(obj.f_cvx + obj.f_ncvx)
    H = hess_ncvx(w, m, spec)
    assert np.allclose(H, -spec.lambdas[2] * hess_phi3(w, m) + spec.lambdas[3] * hess_phi4(w, m))


@pytest.mark.parametrize("xi,want", [(0, (1, 0, 0, 0)), (1, (1, 0.5, 1 / 3, 0.25)),
                                     (10, (1, 5, 110 / 6, 55))])
def test_crra_lambdas(xi, want):
    assert crra_lambdas(xi).lambdas == pytest.approx(want, rel=1e-15)


def test_validation_errors():
    with pytest.raises(DimensionError):
        ReturnsMatrix(np.ones((1, 3)))
    with pytest.raises(DataError):
        ReturnsMatrix(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        MvskSpec((1, -1, 0, 0))
    with pytest.raises(ValueError):
        FeasibleSet(0.5)
    with pytest.raises(ResourceLimitError, match="O\\(N\\^4\\)"):
        estimate_moments(np.zeros((3, 160)))
    m = synthetic_moments(3, 0)
    with pytest.raises(DimensionError):
        portfolio_moments(np.ones(4), m)


def test_feasible_set_membership(rng):
    fs = FeasibleSet(1.5)
    assert fs.contains([1.25, -0.25]) and not fs.contains([1.3, -0.3])
    for w in random_feasible(rng, 4, 1.5, size=50):
        assert fs.contains(w)


def test_footprint():
    assert moments_footprint(200) == 8 * (200 + 200 ** 2 + 200 ** 3 + 200 ** 4)
    m = synthetic_moments(3, 0)
    assert m.nbytes == moments_footprint(3)
