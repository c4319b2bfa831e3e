"""Brute-force reference solvers and random instance generators used by the tests."""

import itertools

import numpy as np
from scipy.optimize import minimize

from mvskopt.subsolvers import LinearConstraintSystem, QcqpProblem, QuadraticConstraint, QpProblem
from mvskopt.subsolvers import lift_l1


def _soft(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def _shift_for_budget(v, lam):
    """``soft(v - nu, lam)`` with ``nu`` chosen so the entries sum to one.

    The sum is piecewise linear and nonincreasing in ``nu`` with kinks at
    ``v_i +- lam``, so the root is found exactly between two kinks.
    """
    kinks = np.sort(np.concatenate([v - lam, v + lam, [v.min() - lam - 2.0, v.max() + lam + 2.0]]))
    sums = np.array([_soft(v - k, lam).sum() for k in kinks])
    j = np.searchsorted(-sums, -1.0)
    j = min(max(j, 1), kinks.size - 1)
    a, b = kinks[j - 1], kinks[j]
    sa, sb = sums[j - 1], sums[j]
    nu = a if sa == sb else a + (sa - 1.0) * (b - a) / (sa - sb)
    return _soft(v - nu, lam)


def project_leverage(v, leverage):
    """Euclidean projection onto ``{sum w = 1, ||w||_1 <= L}``: exact shift, bisection on the threshold."""
    v = np.asarray(v, dtype=float)
    w = v - (v.sum() - 1.0) / v.size
    if np.abs(w).sum() <= leverage:
        return w
    lo, hi = 0.0, np.abs(v).max() + 2.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if np.abs(_shift_for_budget(v, mid)).sum() > leverage:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return _shift_for_budget(v, hi)


def projected_gradient_qp(Q, q, leverage, iters=20_000):
    """Accelerated projected gradient for ``min 1/2 w'Qw + q'w`` over the leverage simplex."""
    n = q.size
    step = 1.0 / np.linalg.eigvalsh(Q).max()
    x = y = np.full(n, 1.0 / n)
    t = 1.0
    for _ in range(iters):
        x_new = project_leverage(y - step * (Q @ y + q), leverage)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = x_new + (t - 1) / t_new * (x_new - x)
        if np.abs(x_new - x).max() < 1e-13:
            x = x_new
            break
        x, t = x_new, t_new
    return x


def enumerate_vertices(c, A, b):
    """Minimum of ``c'x`` over ``Ax <= b`` by trying every basis (bounded problems only)."""
    m, n = A.shape
    best, arg = np.inf, None
    for rows in itertools.combinations(range(m), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + 1e-9) and c @ x < best:
            best, arg = c @ x, x
    return best, arg


def random_qp(rng, n, leverage=1.5):
    """Strongly convex QP in ``w`` over the lifted leverage simplex, as used by the solvers."""
    M = rng.normal(size=(n, n))
    Qw = M @ M.T / n + 0.1 * np.eye(n)
    qw = rng.normal(size=n)
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = Qw
    return QpProblem(Q, np.append(qw, np.zeros(n)), lift_l1(n, leverage)), Qw, qw


def random_lp(rng, n):
    """Bounded LP: box ``|x_i| <= 1`` plus random cuts that keep the origin feasible."""
    k = rng.integers(1, n + 2)
    A = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(k, n))])
    b = np.concatenate([np.ones(2 * n), rng.uniform(0.1, 1.0, size=k)])
    c = rng.normal(size=n)
    return c, LinearConstraintSystem(np.zeros((0, n)), [], A, b)


def random_qcqp(rng, n, k):
    """Convex QCQP with a strictly feasible origin and a bounded feasible set."""
    M = rng.normal(size=(n, n))
    Q0 = M @ M.T / n * rng.uniform(0, 1)
    q0 = rng.normal(size=n)
    quads = []
    for _ in range(k):
        M = rng.normal(size=(n, n))
        quads.append(QuadraticConstraint(M @ M.T / n + 0.05 * np.eye(n), rng.normal(size=n) * 0.5,
                                         -rng.uniform(0.5, 2.0)))
    cons = LinearConstraintSystem(np.zeros((0, n)), [], rng.normal(size=(1, n)), [rng.uniform(0.2, 1)])
    return QcqpProblem(Q0, q0, quads, cons)


def qcqp_reference(problem, rng, starts=8):
    """Best SLSQP value over several starts; an independent solver for small instances."""
    n = problem.n
    cons = [{"type": "ineq", "fun": (lambda x, qc=qc: -qc.value(x)),
             "jac": (lambda x, qc=qc: -qc.grad(x))} for qc in problem.quad]
    G, h = problem.cons.A_in, problem.cons.b_in
    cons.append({"type": "ineq", "fun": lambda x: h - G @ x, "jac": lambda x: -G})
    best = np.inf
    for s in range(starts):
        x0 = np.zeros(n) if s == 0 else rng.normal(size=n) * 0.3
        r = minimize(problem.objective, x0, jac=lambda x: problem.Q0 @ x + problem.q0,
                     constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        if problem.max_violation(r.x) <= 1e-9:
            best = min(best, r.fun)
    return best


def grid_minimum_2d(problem, half_width=4.0, points=401, rounds=8):
    """Feasible-grid search for ``n = 2`` with successive zooming around the incumbent."""
    centre = np.zeros(2)
    width = half_width
    best = np.inf
    for _ in range(rounds):
        g = np.linspace(-width, width, points)
        X, Y = np.meshgrid(centre[0] + g, centre[1] + g)
        P = np.stack([X.ravel(), Y.ravel()], axis=1)
        ok = np.all(P @ problem.cons.A_in.T <= problem.cons.b_in, axis=1)
        for qc in problem.quad:
            ok &= 0.5 * np.einsum("si,ij,sj->s", P, qc.Q, P) + P @ qc.q + qc.c <= 0
        vals = 0.5 * np.einsum("si,ij,sj->s", P, problem.Q0, P) + P @ problem.q0 + problem.c0
        vals[~ok] = np.inf
        i = int(np.argmin(vals))
        if vals[i] < best:
            best = vals[i]
            centre = P[i]
        width *= 10 / points * 4
    return best
