"""Solver-independent KKT verification for QP, LP and QCQP solutions.

Given only a candidate ``x``, each constraint is rescaled by the norm of its
gradient at ``x``, multipliers for the nearly active ones are fitted by
nonnegative least squares, and the worst of stationarity, primal violation
and complementarity is returned.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls

from .constraints import LinearConstraintSystem


def _check(grad0, eq_grads, eq_vals, in_grads, in_vals, act_tol):
    n = grad0.size
    viol = 0.0
    eq_cols = []
    for g, v in zip(eq_grads, eq_vals):
        nrm = np.linalg.norm(g)
        if nrm == 0:
            viol = max(viol, abs(v))
            continue
        viol = max(viol, abs(v) / nrm)
        eq_cols.append(g / nrm)
    act_cols, act_slack = [], []
    for g, v in zip(in_grads, in_vals):
        nrm = np.linalg.norm(g)
        if nrm == 0:
            viol = max(viol, v)
            continue
        v = v / nrm
        viol = max(viol, v)
        if v >= -act_tol:
            act_cols.append(g / nrm)
            act_slack.append(-v)
    cols = act_cols + eq_cols + [-c for c in eq_cols]
    if not cols:
        return float(max(np.abs(grad0).max(initial=0.0), viol, 0.0))
    M = np.array(cols).T.reshape(n, -1)
    coef, _ = nnls(M, -grad0, maxiter=100 * M.shape[1])
    stat = np.abs(grad0 + M @ coef).max(initial=0.0)
    k = len(act_cols)
    comp = np.abs(coef[:k] * np.maximum(np.array(act_slack), 0.0)).max(initial=0.0)
    return float(max(stat, viol, comp, 0.0))


def _linear_parts(cons: LinearConstraintSystem, x):
    eq_vals = cons.A_eq @ x - cons.b_eq
    in_vals = cons.A_in @ x - cons.b_in
    return list(cons.A_eq), list(eq_vals), list(cons.A_in), list(in_vals)


def kkt_residual_qp(Q, q, cons: LinearConstraintSystem, x, act_tol: float = 1e-7) -> float:
    x = np.asarray(x, dtype=float)
    grad0 = np.asarray(Q, dtype=float) @ x + np.asarray(q, dtype=float)
    return _check(grad0, *_linear_parts(cons, x), act_tol)


def kkt_residual_lp(c, cons: LinearConstraintSystem, x, act_tol: float = 1e-7) -> float:
    c = np.asarray(c, dtype=float)
    return kkt_residual_qp(np.zeros((c.size, c.size)), c, cons, x, act_tol)


def kkt_residual_qcqp(problem, x, act_tol: float = 1e-7) -> float:
    """``problem`` is a :class:`QcqpProblem`."""
    x = np.asarray(x, dtype=float)
    grad0 = problem.Q0 @ x + problem.q0
    eq_g, eq_v, in_g, in_v = _linear_parts(problem.cons, x)
    for qc in problem.quad:
        in_g.append(qc.Q @ x + qc.q)
        in_v.append(0.5 * x @ qc.Q @ x + qc.q @ x + qc.c)
    return _check(grad0, eq_g, eq_v, in_g, in_v, act_tol)
