"""
Successive convex approximation for the four-moment portfolio objective.

Three surrogates share one loop:

* ``dc``: the whole objective is majorized by an isotropic quadratic
  (convex-concave procedure), unit step;
* ``mm``: the mean/variance part is kept exact and only the skew/kurtosis
  part is majorized, unit step;
* ``qmvsk``: the skew/kurtosis part gets a PSD-projected second-order model,
  diminishing steps.
"""

from __future__ import annotations

import time

import numpy as np

from ..bounds import dc_tau, mm_tau, nearest_psd
from ..errors import DimensionError, SubsolverError
from ..moments import (FeasibleSet, MomentSet, MvskSpec, hess_ncvx, higher_order_terms,
                       mvsk_objective)
from ..subsolvers import PortfolioBlock, QpProblem, solve_qp
from .common import (CONVERGED, MAX_ITER, IterationRecord, SolveOptions, SolveReport,
                     default_start, projected_gradient_residual, stop_check)

MVSK_MAX_ITER = 1000


def _objective(w, m, spec, need_hessian):
    terms = higher_order_terms(w, m) if spec.has_nonconvex_part else None
    obj = mvsk_objective(w, m, spec, terms)
    H = None
    if need_hessian:
        H = hess_ncvx(w, m, spec, terms) if terms is not None else np.zeros((w.size, w.size))
    return obj, H


def dc_subproblem(wk, grad, tau):
    """``(P, p)`` of ``1/2 w'Pw + p'w`` for the convex-concave step."""
    n = wk.size
    return tau * np.eye(n), grad - tau * wk


def mm_subproblem(wk, m: MomentSet, spec: MvskSpec, grad_ncvx, tau):
    l1, l2 = spec.lambdas[:2]
    P = 2 * l2 * np.asarray(m.sigma) + tau * np.eye(wk.size)
    p = -l1 * m.mu + grad_ncvx - tau * wk
    return P, p


def q_subproblem(wk, m: MomentSet, spec: MvskSpec, grad_ncvx, H_psd, tau_w):
    l1, l2 = spec.lambdas[:2]
    P = 2 * l2 * np.asarray(m.sigma) + H_psd + tau_w * np.eye(wk.size)
    p = -l1 * m.mu + grad_ncvx - H_psd @ wk - tau_w * wk
    return P, p


def mm_surrogate(w, wk, m: MomentSet, spec: MvskSpec, tau: float) -> float:
    """Global upper model of the objective that touches it at ``wk``."""
    w = np.asarray(w, dtype=float)
    wk = np.asarray(wk, dtype=float)
    at_k = mvsk_objective(wk, m, spec)
    l1, l2 = spec.lambdas[:2]
    d = w - wk
    f_cvx = -l1 * float(m.mu @ w) + l2 * float(w @ m.sigma @ w)
    return f_cvx + at_k.f_ncvx + float(at_k.grad_ncvx @ d) + 0.5 * tau * float(d @ d)


def default_tau_w(m: MomentSet, spec: MvskSpec) -> float:
    if spec.lambdas[1] > 0:
        return 0.0
    return 1e-6 * float(np.trace(m.sigma)) / m.n_assets


def _check_start(w, n, fs):
    w = default_start(n) if w is None else np.asarray(w, dtype=float).copy()
    if w.shape != (n,):
        raise DimensionError(f"initial point has shape {w.shape}, expected ({n},)")
    if not fs.contains(w, 1e-9):
        raise ValueError(f"initial point violates the feasible set by {fs.violation(w):.3e}")
    return w


def _solve_sub(P, p, block, tol, method, k):
    nb = block.size
    n = P.shape[0]
    Pb = np.zeros((nb, nb))
    Pb[:n, :n] = (P + P.T) / 2
    pb = np.zeros(nb)
    pb[:n] = p
    res = solve_qp(QpProblem(Pb, pb, block.system()), tol=tol)
    if not res.ok:
        raise SubsolverError(
            f"{method}: QP subproblem ended with status {res.status} "
            f"(KKT residual {res.kkt_residual:.2e}) at iteration {k}",
            status=res.status, iteration=k)
    return res.x[:n]


def _run(method, m: MomentSet, spec: MvskSpec, fs: FeasibleSet, opts: SolveOptions):
    n = m.n_assets
    block = PortfolioBlock(n, fs.leverage)
    w = _check_start(opts.w_init, n, fs)
    max_iter = opts.max_iter or MVSK_MAX_ITER
    unit_step = method in ("dc", "mm")
    if method == "dc":
        tau = max(dc_tau(m, spec, fs), 1e-12)
    elif method == "mm":
        tau = mm_tau(m, spec, fs)
    else:
        tau = default_tau_w(m, spec) if opts.tau_w is None else opts.tau_w

    def stationarity(w, obj):
        if not opts.record_stationarity:
            return 0.0
        return projected_gradient_residual(w, obj.grad, fs)

    t0 = time.perf_counter()
    obj, H = _objective(w, m, spec, method == "qmvsk")
    trace = [IterationRecord(0, obj.f, 0.0, 0.0, fs.violation(w), stationarity(w, obj),
                             (time.perf_counter() - t0) * 1e3)]
    calls = 0
    termination = MAX_ITER
    gammas = iter(opts.schedule)
    for k in range(max_iter):
        if method == "dc":
            P, p = dc_subproblem(w, obj.grad, tau)
        elif method == "mm":
            P, p = mm_subproblem(w, m, spec, obj.grad_ncvx, tau)
        else:
            P, p = q_subproblem(w, m, spec, obj.grad_ncvx, nearest_psd(H), tau)
        w_hat = _solve_sub(P, p, block, opts.sub_tol, method, k)
        calls += 1
        if unit_step:
            gamma = 1.0
            w_new = w_hat
        else:
            gamma = next(gammas)
            w_new = w + gamma * (w_hat - w)
        obj_new, H_new = _objective(w_new, m, spec, method == "qmvsk")
        if unit_step and obj_new.f > obj.f:
            # inexact subproblem solutions can break monotone descent by a hair
            w_new, obj_new, H_new = w, obj, H
        done = stop_check(w, w_new, obj.f, obj_new.f, opts.tol)
        w, obj, H = w_new, obj_new, H_new
        stat = stationarity(w, obj)
        trace.append(IterationRecord(k + 1, obj.f, gamma, 0.0, fs.violation(w),
                                     stat, (time.perf_counter() - t0) * 1e3))
        if done and not opts.record_stationarity:
            stat = projected_gradient_residual(w, obj.grad, fs)
        # small relative progress alone is not enough: slow unit-step
        # schemes can crawl while still far from stationary
        if done and stat <= opts.stat_tol:
            termination = CONVERGED
            break
    stat = trace[-1].stationarity if opts.record_stationarity else projected_gradient_residual(w, obj.grad, fs)
    return SolveReport(method, w, obj.f, termination, trace, calls, obj.moments,
                       fs.violation(w), stat)


def solve_mvsk_dc(m: MomentSet, spec: MvskSpec, fs: FeasibleSet = FeasibleSet(),
                  opts: SolveOptions | None = None) -> SolveReport:
    return _run("dc", m, spec, fs, opts or SolveOptions())


def solve_mvsk_mm(m: MomentSet, spec: MvskSpec, fs: FeasibleSet = FeasibleSet(),
                  opts: SolveOptions | None = None) -> SolveReport:
    return _run("mm", m, spec, fs, opts or SolveOptions())


def solve_mvsk_q(m: MomentSet, spec: MvskSpec, fs: FeasibleSet = FeasibleSet(),
                 opts: SolveOptions | None = None) -> SolveReport:
    return _run("qmvsk", m, spec, fs, opts or SolveOptions())
