"""
Moment tilting: push all four moments of a reference portfolio ``w0`` along a
direction ``d`` by a common amount ``delta`` inside a tracking-error ball.

Constraints, each ``<= 0``::

    g1 = phi1(w0) - phi1(w) + d1 delta
    g2 = phi2(w) - phi2(w0) + d2 delta
    g3 = phi3(w0) - phi3(w) + d3 delta
    g4 = phi4(w) - phi4(w0) + d4 delta
    g5 = (w - w0)' Sigma (w - w0) - kappa^2

plus ``w`` in the leverage simplex and ``delta >= 0``. Subproblem variables are
laid out as ``(w, [u], delta)`` where ``u`` appears only when leverage > 1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..bounds import nearest_psd
from ..errors import DimensionError, SubsolverError
from ..moments import FeasibleSet, MomentSet, higher_order_terms, portfolio_moments
from ..subsolvers import (INFEASIBLE, LinearConstraintSystem, PortfolioBlock, QcqpProblem, QpProblem,
                          QuadraticConstraint, solve_lp, solve_qcqp, solve_qp)
from ..subsolvers.kkt import _check
from .common import CONVERGED, MAX_ITER, IterationRecord, SolveOptions, SolveReport, stop_check

TILTING_MAX_ITER = 500
SLATER_SLACK = 1e-8


@dataclass(frozen=True)
class TiltingSpec:
    w0: np.ndarray
    d: np.ndarray
    kappa: float
    theta: float = 0.5
    tau_w: float = 1e-5
    tau_delta: float = 1e-5

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=float).ravel()
        d = np.asarray(self.d, dtype=float).ravel()
        if d.size != 4:
            raise DimensionError(f"tilt direction needs 4 entries, got {d.size}")
        if np.any(~np.isfinite(d)) or np.any(d < 0):
            raise ValueError(f"tilt direction must be finite and >= 0, got {d}")
        if not np.any(d[:4] > 0):
            raise ValueError("tilt direction must have a positive entry, otherwise delta is unbounded")
        if not (np.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        for name in ("tau_w", "tau_delta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be >= 0, got {v}")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "kappa", float(self.kappa))


def default_tilting(m: MomentSet, c: float, w0=None, **kw) -> TiltingSpec:
    """Equal-weight reference, ``d_i = |phi_i(w0)|`` and ``kappa = c sqrt(phi2(w0))``."""
    n = m.n_assets
    w0 = np.full(n, 1.0 / n) if w0 is None else np.asarray(w0, dtype=float)
    phi = np.array(portfolio_moments(w0, m))
    return TiltingSpec(w0, np.abs(phi), c * np.sqrt(phi[1]), **kw)


@dataclass
class TiltingIterate:
    """Current ``(w, delta)`` with cached moment derivatives."""

    w: np.ndarray
    delta: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.delta = float(self.delta)
        self._terms = None

    def terms(self, m: MomentSet):
        if self._terms is None:
            self._terms = higher_order_terms(self.w, m)
        return self._terms


def _ref_moments(m: MomentSet, tilt: TiltingSpec) -> np.ndarray:
    return np.array(portfolio_moments(tilt.w0, m))


def tilting_constraints(w, delta, m: MomentSet, tilt: TiltingSpec) -> np.ndarray:
    """``(g1, ..., g5)`` at ``(w, delta)``."""
    w = np.asarray(w, dtype=float)
    phi = np.array(portfolio_moments(w, m))
    ref = _ref_moments(m, tilt)
    d = tilt.d
    dw = w - tilt.w0
    return np.array([
        ref[0] - phi[0] + d[0] * delta,
        phi[1] - ref[1] + d[1] * delta,
        ref[2] - phi[2] + d[2] * delta,
        phi[3] - ref[3] + d[3] * delta,
        float(dw @ m.sigma @ dw) - tilt.kappa ** 2,
    ])


def tilting_gradients(it: TiltingIterate, m: MomentSet, tilt: TiltingSpec):
    """Gradients of ``g1..g5`` in ``w`` (rows) and their ``delta`` coefficients."""
    t = it.terms(m)
    sw = m.sigma @ it.w
    Gw = np.array([-m.mu, 2 * sw, -t.grad3, t.grad4, 2 * (sw - m.sigma @ tilt.w0)])
    Gd = np.append(tilt.d, 0.0)
    return Gw, Gd


def constraint_scales(m: MomentSet, tilt: TiltingSpec) -> np.ndarray:
    """Positive divisors that put ``g1..g5`` on a relative scale inside subproblems.

    Raw moments differ by orders of magnitude (daily returns give fourth
    moments near 1e-8), which would make absolute subproblem tolerances and
    the ``eta`` level meaningless for the small ones. Dividing a constraint by
    a positive constant leaves the feasible set unchanged.
    """
    ref = np.abs(_ref_moments(m, tilt))
    fallback = [np.abs(a).max(initial=0.0) for a in (m.mu, m.sigma, m.phi, m.psi)]
    s = [r if r > 0 else (f if f > 0 else 1.0) for r, f in zip(ref, fallback)]
    s.append(tilt.kappa ** 2 if tilt.kappa > 0 else s[1])
    return np.array(s)


def tilting_violation(w, delta, m: MomentSet, tilt: TiltingSpec, fs: FeasibleSet) -> float:
    g = tilting_constraints(w, delta, m, tilt)
    return float(max(g.max(), -delta, fs.violation(w), 0.0))


class _Layout:
    """Index bookkeeping for ``(w, [u], delta[, t])`` subproblem vectors."""

    def __init__(self, n, fs: FeasibleSet, extra=0):
        self.block = PortfolioBlock(n, fs.leverage)
        self.n = n
        self.idelta = self.block.size
        self.size = self.block.size + 1 + extra

    def row(self, gw=None, gd=0.0, gt=None):
        r = np.zeros(self.size)
        if gw is not None:
            r[:self.n] = gw
        r[self.idelta] = gd
        if gt is not None:
            r[-1] = gt
        return r

    def pad(self, Q):
        out = np.zeros((self.size, self.size))
        out[:self.n, :self.n] = Q
        return out

    def base(self, m: MomentSet, tilt: TiltingSpec, slack: float = 0.0) -> LinearConstraintSystem:
        """``w`` in the leverage simplex, ``g1 <= slack`` (scaled units) and ``delta >= 0``."""
        cons = self.block.system().embed(self.size, 0)
        ref1 = float(tilt.w0 @ m.mu)
        cons = cons.add_ineq(self.row(-m.mu, tilt.d[0]), -ref1 + slack * constraint_scales(m, tilt)[0])
        return cons.add_ineq(self.row(gd=-1.0), 0.0)


def _linear_rows(it, m, tilt, lay, js):
    """Rows ``a`` and offsets ``b`` with ``gbar_j(x) = a'x - b`` for each ``j`` in ``js``."""
    sc = constraint_scales(m, tilt)
    g = tilting_constraints(it.w, it.delta, m, tilt) / sc
    Gw, Gd = tilting_gradients(it, m, tilt)
    Gw, Gd = Gw / sc[:, None], Gd / sc
    rows, offs = [], []
    for j in js:
        rows.append(lay.row(Gw[j], Gd[j]))
        offs.append(-(g[j] - Gw[j] @ it.w - Gd[j] * it.delta))
    return rows, offs, g


def _check_sub(res, what, k):
    if not res.ok:
        raise SubsolverError(
            f"{what} ended with status {res.status} (KKT residual {res.kkt_residual:.2e})"
            + (f" at iteration {k}" if k is not None else ""),
            status=res.status, iteration=k)


def eta_linear(it: TiltingIterate, m: MomentSet, tilt: TiltingSpec,
               fs: FeasibleSet = FeasibleSet(), tol: float = 1e-9, k=None) -> float:
    """Relaxation level for the linearized constraints ``j = 2..5``, in scaled units."""
    lay = _Layout(m.n_assets, fs, extra=1)
    cons = lay.base(m, tilt)
    rows, offs, g = _linear_rows(it, m, tilt, lay, range(1, 5))
    for r, b in zip(rows, offs):
        r[-1] = -1.0
        cons = cons.add_ineq(r, b)
    cons = cons.add_ineq(lay.row(gt=-1.0), 0.0)
    c = lay.row(gt=1.0)
    res = solve_lp(c, cons, tol=tol)
    _check_sub(res, "eta LP", k)
    t_star = max(float(res.x[-1]), 0.0)
    return (1 - tilt.theta) * float(np.maximum(g[1:5], 0).max()) + tilt.theta * t_star


def _convex_quads(m, tilt, lay):
    """Exact ``g2`` and ``g5`` as quadratic constraints."""
    ref = _ref_moments(m, tilt)
    sc = constraint_scales(m, tilt)
    S2 = lay.pad(2 * np.asarray(m.sigma))
    sw0 = m.sigma @ tilt.w0
    g2 = QuadraticConstraint(S2, lay.row(gd=tilt.d[1]), -ref[1]).scaled(1 / sc[1])
    g5 = QuadraticConstraint(S2, lay.row(-2 * sw0), float(tilt.w0 @ sw0) - tilt.kappa ** 2)
    return [g2, g5.scaled(1 / sc[4])]


def _quadratic_models(it, m, tilt, lay, shift_t=False):
    """``gtilde_3`` and ``gtilde_4`` as ``1/2 x'Qx + q'x + c`` pieces."""
    t = it.terms(m)
    ref = _ref_moments(m, tilt)
    wk = it.w
    H3 = nearest_psd(-t.hess3)
    H4 = nearest_psd(t.hess4)
    s3, s4 = constraint_scales(m, tilt)[2:4]
    c3 = (ref[2] - t.phi3 + float(t.grad3 @ wk) + 0.5 * float(wk @ H3 @ wk)) / s3
    c4 = (t.phi4 - ref[3] - float(t.grad4 @ wk) + 0.5 * float(wk @ H4 @ wk)) / s4
    q3 = lay.row((-t.grad3 - H3 @ wk) / s3, tilt.d[2] / s3)
    q4 = lay.row((t.grad4 - H4 @ wk) / s4, tilt.d[3] / s4)
    if shift_t:
        q3[-1] = q4[-1] = -1.0
    return [(lay.pad(H3 / s3), q3, c3), (lay.pad(H4 / s4), q4, c4)]


def _relaxed(quads, slack):
    return [QuadraticConstraint(qc.Q, qc.q, qc.c - slack) for qc in quads] if slack else quads


def _solve_convex(build, tol, what, k):
    """Solve ``build(0)``; if it has no strictly feasible point, retry with a tiny slack.

    When ``w0`` cannot be improved in mean and variance at once, the exact
    convex constraints meet only at ``(w0, 0)`` and the barrier has no
    interior to start from.
    """
    res = solve_qcqp(build(0.0), tol=tol)
    if res.status == INFEASIBLE:
        res = solve_qcqp(build(SLATER_SLACK), tol=tol)
    _check_sub(res, what, k)
    return res


def eta_quadratic(it: TiltingIterate, m: MomentSet, tilt: TiltingSpec,
                  fs: FeasibleSet = FeasibleSet(), tol: float = 1e-9, k=None) -> float:
    """Relaxation level for the quadratic models of the skewness and kurtosis constraints."""
    lay = _Layout(m.n_assets, fs, extra=1)

    def build(slack):
        cons = lay.base(m, tilt, slack).add_ineq(lay.row(gt=-1.0), 0.0)
        quads = _convex_quads(m, tilt, lay)
        quads += [QuadraticConstraint(Q, q, c) for Q, q, c in _quadratic_models(it, m, tilt, lay, True)]
        return QcqpProblem(np.zeros((lay.size, lay.size)), lay.row(gt=1.0), _relaxed(quads, slack), cons)

    res = _solve_convex(build, tol, "eta QCQP", k)
    g = tilting_constraints(it.w, it.delta, m, tilt) / constraint_scales(m, tilt)
    t_star = max(float(res.x[-1]), 0.0)
    return (1 - tilt.theta) * float(np.maximum(g[2:4], 0).max()) + tilt.theta * t_star


def _prox_objective(it, tilt, lay):
    P = np.zeros((lay.size, lay.size))
    P[:lay.n, :lay.n] = tilt.tau_w * np.eye(lay.n)
    P[lay.idelta, lay.idelta] = tilt.tau_delta
    p = lay.row(-tilt.tau_w * it.w, -1.0 - tilt.tau_delta * it.delta)
    return P, p


def tilting_kkt_residual(w, delta, m: MomentSet, tilt: TiltingSpec, fs: FeasibleSet = FeasibleSet(),
                         act_tol: float = 1e-4) -> float:
    """KKT residual of ``max delta`` under the true constraints, gradients row-normalized."""
    w = np.asarray(w, dtype=float)
    lay = _Layout(w.size, fs)
    x = np.zeros(lay.size)
    x[:w.size] = w
    if lay.block.lifted:
        x[w.size:2 * w.size] = np.abs(w)
    x[lay.idelta] = delta
    cons = lay.base(m, tilt)
    it = TiltingIterate(w, delta)
    g = tilting_constraints(w, delta, m, tilt)
    Gw, Gd = tilting_gradients(it, m, tilt)
    in_g = list(cons.A_in) + [lay.row(Gw[j], Gd[j]) for j in range(1, 4)]
    in_v = list(cons.A_in @ x - cons.b_in) + list(g[1:4])
    eq_g = list(cons.A_eq)
    eq_v = list(cons.A_eq @ x - cons.b_eq)
    if _ball_is_point(m, tilt):
        # g5 <= 0 then means w = w0, whose gradient vanishes there; use the
        # equivalent linear equalities so constraint qualification holds
        for i in range(w.size):
            eq_g.append(lay.row(np.eye(w.size)[i]))
            eq_v.append(w[i] - tilt.w0[i])
    else:
        in_g.append(lay.row(Gw[4], Gd[4]))
        in_v.append(g[4])
    return _check(lay.row(gd=-1.0), eq_g, eq_v, in_g, in_v, act_tol)


def _ball_is_point(m: MomentSet, tilt: TiltingSpec) -> bool:
    return tilt.kappa == 0 and np.linalg.eigvalsh(m.sigma).min() > 0


def _solve_l_sub(it, eta, m, tilt, fs, tol, k):
    lay = _Layout(m.n_assets, fs)
    cons = lay.base(m, tilt)
    rows, offs, _ = _linear_rows(it, m, tilt, lay, range(1, 5))
    for r, b in zip(rows, offs):
        cons = cons.add_ineq(r, b + eta)
    P, p = _prox_objective(it, tilt, lay)
    res = solve_qp(QpProblem(P, p, cons), tol=tol)
    _check_sub(res, "tilting QP subproblem", k)
    return res.x[:lay.n], max(float(res.x[lay.idelta]), 0.0)


def _solve_q_sub(it, eta, m, tilt, fs, tol, k):
    lay = _Layout(m.n_assets, fs)
    P, p = _prox_objective(it, tilt, lay)

    def build(slack):
        quads = _convex_quads(m, tilt, lay)
        quads += [QuadraticConstraint(Q, q, c - eta) for Q, q, c in _quadratic_models(it, m, tilt, lay)]
        return QcqpProblem(P, p, _relaxed(quads, slack), lay.base(m, tilt, slack))

    res = _solve_convex(build, tol, "tilting QCQP subproblem", k)
    return res.x[:lay.n], max(float(res.x[lay.idelta]), 0.0)


def _run(method, m: MomentSet, tilt: TiltingSpec, fs: FeasibleSet, opts: SolveOptions):
    n = m.n_assets
    if tilt.w0.shape != (n,):
        raise DimensionError(f"w0 has shape {tilt.w0.shape}, expected ({n},)")
    if not fs.contains(tilt.w0, 1e-9):
        raise ValueError(f"w0 violates the feasible set by {fs.violation(tilt.w0):.3e}")
    linear = method == "lmvskt"
    eta_fn = eta_linear if linear else eta_quadratic
    sub_fn = _solve_l_sub if linear else _solve_q_sub
    max_iter = opts.max_iter or TILTING_MAX_ITER

    t0 = time.perf_counter()
    it = TiltingIterate(tilt.w0.copy(), 0.0)

    def record(k, gamma, eta):
        viol = tilting_violation(it.w, it.delta, m, tilt, fs)
        stat = tilting_kkt_residual(it.w, it.delta, m, tilt, fs) if opts.record_stationarity else 0.0
        return IterationRecord(k, it.delta, gamma, eta, viol, stat, (time.perf_counter() - t0) * 1e3)

    trace = [record(0, 0.0, 0.0)]
    calls = 0
    termination = MAX_ITER
    if _ball_is_point(m, tilt):
        # the tracking-error ball is the single point w0, where any d with a
        # positive entry pins delta to 0
        termination = CONVERGED
    else:
        gammas = iter(opts.schedule)
        for k in range(max_iter):
            eta = eta_fn(it, m, tilt, fs, opts.sub_tol, k)
            w_hat, d_hat = sub_fn(it, eta, m, tilt, fs, opts.sub_tol, k)
            calls += 2
            gamma = next(gammas)
            w_new = it.w + gamma * (w_hat - it.w)
            d_new = it.delta + gamma * (d_hat - it.delta)
            done = stop_check(np.append(it.w, it.delta), np.append(w_new, d_new),
                              it.delta, d_new, opts.tol)
            it = TiltingIterate(w_new, d_new)
            trace.append(record(k + 1, gamma, eta))
            if done and not opts.record_stationarity:
                trace[-1].stationarity = tilting_kkt_residual(it.w, it.delta, m, tilt, fs)
            # delta can settle while w still drifts along the active constraints
            if done and trace[-1].stationarity <= opts.stat_tol:
                termination = CONVERGED
                break
    w = it.w
    stat = trace[-1].stationarity if opts.record_stationarity else tilting_kkt_residual(w, it.delta, m, tilt, fs)
    return SolveReport(method, w, it.delta, termination, trace, calls, portfolio_moments(w, m),
                       tilting_violation(w, it.delta, m, tilt, fs), stat, delta_final=it.delta)


def solve_tilting_l(m: MomentSet, tilt: TiltingSpec, fs: FeasibleSet = FeasibleSet(),
                    opts: SolveOptions | None = None) -> SolveReport:
    return _run("lmvskt", m, tilt, fs, opts or SolveOptions())


def solve_tilting_q(m: MomentSet, tilt: TiltingSpec, fs: FeasibleSet = FeasibleSet(),
                    opts: SolveOptions | None = None) -> SolveReport:
    return _run("qmvskt", m, tilt, fs, opts or SolveOptions())
