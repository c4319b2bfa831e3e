import numpy as np
import pytest
from scipy.optimize import linprog

from mvskopt.moments import FeasibleSet, portfolio_moments
from mvskopt.sca import (SolveOptions, TiltingIterate, TiltingSpec, default_tilting, eta_linear,
                         eta_quadratic, solve_tilting_l, solve_tilting_q, tilting_constraints,
                         tilting_kkt_residual)
from mvskopt.sca.tilting import (_Layout, _linear_rows, _quadratic_models, constraint_scales,
                                 tilting_gradients)

from conftest import random_feasible, synthetic_moments

L_OPTS = dict(tau_w=10.0, tau_delta=10.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        TiltingSpec(np.ones(2) / 2, np.zeros(4), 0.1)
    with pytest.raises(ValueError):
        TiltingSpec(np.ones(2) / 2, np.ones(4), 0.1, theta=1.0)
    with pytest.raises(ValueError):
        TiltingSpec(np.ones(2) / 2, -np.ones(4), 0.1)


def test_default_direction_and_budget():
    m = synthetic_moments(4, 0)
    tilt = default_tilting(m, 0.3)
    phi = np.array(portfolio_moments(np.full(4, 0.25), m))
    assert np.allclose(tilt.d, np.abs(phi))
    assert tilt.kappa == pytest.approx(0.3 * np.sqrt(phi[1]))
    assert tilt.theta == 0.5 and tilt.tau_w == tilt.tau_delta == 1e-5


def test_constraints_vanish_at_reference():
    m = synthetic_moments(4, 1)
    tilt = default_tilting(m, 0.4)
    g = tilting_constraints(tilt.w0, 0.0, m, tilt)
    assert np.allclose(g[:4], 0, atol=1e-18)
    assert g[4] == pytest.approx(-tilt.kappa ** 2)


def test_gradients_match_finite_differences(rng):
    m = synthetic_moments(5, 2)
    tilt = default_tilting(m, 0.5)
    w = random_feasible(rng, 5)
    Gw, Gd = tilting_gradients(TiltingIterate(w, 0.3), m, tilt)
    h = 1e-6
    for i in range(5):
        e = np.eye(5)[i] * h
        fd = (tilting_constraints(w + e, 0.3, m, tilt) - tilting_constraints(w - e, 0.3, m, tilt)) / (2 * h)
        assert np.allclose(Gw[:, i], fd, rtol=1e-6, atol=1e-6 * np.abs(Gw).max(axis=1))
    fd = (tilting_constraints(w, 0.3 + h, m, tilt) - tilting_constraints(w, 0.3 - h, m, tilt)) / (2 * h)
    assert np.allclose(Gd, fd, rtol=1e-6, atol=1e-14)


def test_surrogates_are_consistent_at_the_expansion_point(rng):
    m = synthetic_moments(5, 3)
    tilt = default_tilting(m, 0.5)
    it = TiltingIterate(random_feasible(rng, 5), 0.2)
    lay = _Layout(5, FeasibleSet())
    x = np.zeros(lay.size)
    x[:5] = it.w
    x[lay.idelta] = it.delta
    sc = constraint_scales(m, tilt)
    g = tilting_constraints(it.w, it.delta, m, tilt) / sc
    Gw, Gd = tilting_gradients(it, m, tilt)
    rows, offs, _ = _linear_rows(it, m, tilt, lay, range(1, 5))
    for j, r, b in zip(range(1, 5), rows, offs):
        assert r @ x - b == pytest.approx(g[j], abs=1e-10 * max(1, abs(g[j])))
        assert np.allclose(r[:5], Gw[j] / sc[j], rtol=1e-12)
    for j, (Q, q, c) in zip((2, 3), _quadratic_models(it, m, tilt, lay)):
        assert 0.5 * x @ Q @ x + q @ x + c == pytest.approx(g[j], abs=1e-10)
        grad = Q @ x + q
        assert np.allclose(grad[:5], Gw[j] / sc[j], atol=1e-10 * np.abs(Gw[j] / sc[j]).max())
        assert grad[lay.idelta] == pytest.approx(Gd[j] / sc[j])


@pytest.mark.parametrize("eta_fn", [eta_linear, eta_quadratic])
def test_eta_vanishes_at_feasible_start(eta_fn):
    m = synthetic_moments(4, 0)
    tilt = default_tilting(m, 0.5)
    assert eta_fn(TiltingIterate(tilt.w0, 0.0), m, tilt) == pytest.approx(0.0, abs=1e-8)


def _infeasible_start(m, tilt):
    return TiltingIterate(np.array([0.9, 0.1]), 2.0)


def test_eta_linear_matches_independent_lp():
    m = synthetic_moments(2, 5)
    tilt = default_tilting(m, 0.3)
    it = _infeasible_start(m, tilt)
    sc = constraint_scales(m, tilt)
    g = tilting_constraints(it.w, it.delta, m, tilt) / sc
    Gw, Gd = tilting_gradients(it, m, tilt)
    # variables (w1, w2, delta, t); minimize t
    A, b = [], []
    A.append(np.append(np.append(-m.mu, tilt.d[0]), 0.0))
    b.append(-float(tilt.w0 @ m.mu))
    for j in range(1, 5):
        gw, gd = Gw[j] / sc[j], Gd[j] / sc[j]
        A.append(np.concatenate([gw, [gd, -1.0]]))
        b.append(-(g[j] - gw @ it.w - gd * it.delta))
    lp = linprog([0, 0, 0, 1], A_ub=np.array(A), b_ub=b, A_eq=[[1, 1, 0, 0]], b_eq=[1],
                 bounds=[(0, None)] * 4, method="highs")
    want = 0.5 * max(g[1:5].max(), 0) + 0.5 * lp.x[3]
    assert want > 0
    assert eta_linear(it, m, tilt) == pytest.approx(want, rel=1e-7, abs=1e-9)


def test_eta_quadratic_matches_grid():
    m = synthetic_moments(2, 5)
    tilt = default_tilting(m, 0.3)
    it = _infeasible_start(m, tilt)
    lay = _Layout(2, FeasibleSet())
    sc = constraint_scales(m, tilt)
    models = _quadratic_models(it, m, tilt, lay)
    g = tilting_constraints(it.w, it.delta, m, tilt) / sc

    def t_needed(a, d):
        x = np.array([a, 1 - a, d])
        w = x[:2]
        true = tilting_constraints(w, d, m, tilt)
        if true[0] > 0 or true[1] > 0 or true[4] > 0:
            return np.inf
        return max(0.0, *(0.5 * x @ Q @ x + q @ x + c for Q, q, c in models))

    lo_a, hi_a, lo_d, hi_d = 0.0, 1.0, 0.0, 3.0
    best = (np.inf, 0.5, 0.0)
    for _ in range(6):
        A = np.linspace(lo_a, hi_a, 81)
        D = np.linspace(lo_d, hi_d, 81)
        for a in A:
            for d in D:
                v = t_needed(a, d)
                if v < best[0]:
                    best = (v, a, d)
        sa, sd = (hi_a - lo_a) / 20, (hi_d - lo_d) / 20
        lo_a, hi_a = max(0.0, best[1] - sa), min(1.0, best[1] + sa)
        lo_d, hi_d = max(0.0, best[2] - sd), best[2] + sd
    want = 0.5 * max(g[2:4].max(), 0) + 0.5 * best[0]
    assert eta_quadratic(it, m, tilt) == pytest.approx(want, abs=1e-5)


@pytest.mark.parametrize("solve,kw", [(solve_tilting_q, {}), (solve_tilting_l, L_OPTS)])
def test_zero_budget_pins_reference(solve, kw):
    m = synthetic_moments(6, 1)
    tilt = default_tilting(m, 0.0, **kw)
    rep = solve(m, tilt)
    assert rep.converged and rep.delta_final == 0
    assert np.abs(rep.w_final - tilt.w0).max() <= 1e-8
    assert rep.stationarity <= 1e-4


@pytest.mark.parametrize("seed", range(2))
def test_delta_nondecreasing_in_budget(seed):
    m = synthetic_moments(6, seed)
    deltas = [solve_tilting_q(m, default_tilting(m, c)).delta_final for c in np.arange(1, 11) / 10]
    assert np.all(np.diff(deltas) >= -1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_linear_and_quadratic_agree_on_two_assets(seed):
    m = synthetic_moments(2, seed)
    rq = solve_tilting_q(m, default_tilting(m, 5.0))
    rl = solve_tilting_l(m, default_tilting(m, 5.0, **L_OPTS), opts=SolveOptions(max_iter=2000))
    assert rq.converged and rl.converged
    assert abs(rq.delta_final - rl.delta_final) <= 1e-4


@pytest.mark.parametrize("solve,kw,mi", [(solve_tilting_q, {}, None), (solve_tilting_l, L_OPTS, 2000)])
@pytest.mark.parametrize("leverage", [1.0, 1.5])
def test_final_point_feasible_and_stationary(solve, kw, mi, leverage):
    m = synthetic_moments(6, 7)
    fs = FeasibleSet(leverage)
    rep = solve(m, default_tilting(m, 0.5, **kw), fs, SolveOptions(tol=1e-9, max_iter=mi))
    assert rep.converged
    assert rep.max_violation <= 1e-6
    assert tilting_constraints(rep.w_final, rep.delta_final, m, default_tilting(m, 0.5)).max() <= 1e-6
    assert max(fs.violation(r) for r in [rep.w_final]) <= 1e-9
    assert tilting_kkt_residual(rep.w_final, rep.delta_final, m, default_tilting(m, 0.5), fs) <= 1e-4
    assert rep.delta_final > 0


def test_trace_columns_and_determinism(tmp_path):
    m = synthetic_moments(4, 2)
    tilt = default_tilting(m, 0.5)
    a = solve_tilting_q(m, tilt)
    b = solve_tilting_q(m, tilt)
    assert a.to_dict() == b.to_dict()
    assert all(r.eta >= 0 for r in a.trace)
    assert a.subsolver_calls == 2 * a.iterations
    assert [r.k for r in a.trace] == list(range(len(a.trace)))


def test_converged_tilting_runs_meet_stat_tol():
    m = synthetic_moments(10, 851)
    rep = solve_tilting_l(m, default_tilting(m, 0.5, **L_OPTS), opts=SolveOptions(max_iter=2000))
    assert rep.converged
    assert rep.stationarity <= 1e-5
    assert tilting_kkt_residual(rep.w_final, rep.delta_final, m, default_tilting(m, 0.5)) <= 1e-5
