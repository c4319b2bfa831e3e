"""
Dense primal-dual interior-point method for convex QPs and LPs.

Solves::

    minimize    1/2 x'Qx + q'x
    subject to  A_eq x = b_eq,  A_in x <= b_in

with Mehrotra's predictor-corrector. Rows of both constraint blocks are
normalized internally; residuals are reported for the normalized problem,
which leaves stationarity and complementarity unchanged and measures primal
feasibility per unit row norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constraints import LinearConstraintSystem

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

_BLOWUP = 1e10


@dataclass
class QpProblem:
    """``min 1/2 x'Qx + q'x`` subject to ``cons``."""

    Q: np.ndarray
    q: np.ndarray
    cons: LinearConstraintSystem

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected ({n}, {n})")
        if self.cons.n != n:
            raise ValueError(f"constraints have {self.cons.n} variables, objective has {n}")
        scale = max(np.abs(self.Q).max(initial=0.0), 1.0)
        if np.abs(self.Q - self.Q.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("Q must be symmetric")
        self.Q = (self.Q + self.Q.T) / 2

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.q @ x)


@dataclass
class SubsolverResult:
    x: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    objective: float = np.nan
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    trace: object = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# slack (in row-normalized units) below which a row may be treated as active
_NEAR_ACTIVE = 1e-6


def _normalize_rows(A, b):
    if A.shape[0] == 0:
        return A, b, np.ones(0)
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    return A / norms[:, None], b / norms, norms


def _drop_remote_rows(G, h, reach=1e8):
    """Drop normalized inequality rows whose half-space contains the ball of radius ``reach``.

    A near-zero row such as ``1e-12 x <= 1`` carries no information for any
    reasonably scaled ``x`` but would enter the normalized system as a
    constraint with right-hand side ``1e12``.
    """
    keep = h <= reach
    return G[keep], h[keep]


def _independent_rows(A, b, tol=1e-10):
    """Drop linearly dependent equality rows; flag an inconsistent system."""
    if A.shape[0] == 0:
        return A, b, True
    Qf, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > tol * max(diag.max(initial=0.0), 1.0)).sum())
    keep = np.sort(piv[:rank])
    A_r, b_r = A[keep], b[keep]
    x_ls = np.linalg.lstsq(A_r, b_r, rcond=None)[0] if rank else np.zeros(A.shape[1])
    consistent = np.abs(A @ x_ls - b).max(initial=0.0) <= 1e-8 * max(1.0, np.abs(b).max(initial=0.0))
    return A_r, b_r, consistent


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, (-v[neg] / dv[neg]).min()))


def _ipm(Q, q, A, b, G, h, tol, max_iter, x0=None):
    """Core predictor-corrector loop on a normalized problem."""
    n, p, m = q.size, b.size, h.size
    reg = 1e-12 * max(1.0, np.abs(Q).max(initial=0.0))
    Kreg = np.zeros((n + p, n + p))
    Kreg[:n, :n] = reg * np.eye(n)
    Kreg[n:, n:] = -1e-14 * np.eye(p)

    def factor(d):
        K = np.zeros((n + p, n + p))
        K[:n, :n] = Q + (G.T * d) @ G
        K[:n, n:] = A.T
        K[n:, :n] = A
        return scipy.linalg.lu_factor(K + Kreg, check_finite=False)

    def solve(lu, r1, r2):
        sol = scipy.linalg.lu_solve(lu, np.concatenate([r1, r2]), check_finite=False)
        return sol[:n], sol[n:]

    # Starting point: least-squares fit of the constraints, slacks shifted positive.
    lu = factor(np.ones(m))
    if x0 is None:
        x, y = solve(lu, -q + G.T @ h, b)
    else:
        x = np.asarray(x0, dtype=float).copy()
        y = np.zeros(p)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m)

    best = None
    it = 0
    for it in range(1, max_iter + 1):
        rd = Q @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z / m) if m else 0.0
        res = _residuals(Q, q, A, b, G, h, x, y, z)
        if best is None or res < best[0]:
            best = (res, x.copy(), y.copy(), z.copy())
        if res <= 1e3 * tol:
            xp, yp, zp, res_p = _polish(Q, q, A, b, G, h, x, y, z, res)
            if res_p <= tol:
                return xp, yp, zp, OPTIMAL, res_p, it
        if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0) > _BLOWUP or np.abs(z).max(initial=0) > _BLOWUP:
            break

        if m:
            d = z / s
            lu = factor(d)
            # predictor
            rc = s * z
            dx, dy = solve(lu, -rd + G.T @ ((rc - z * ri) / s), -rp)
            ds = -ri - G @ dx
            dz = (-rc - z * ds) / s
            a_aff = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz) / m)
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            rc = s * z + ds * dz - sigma * mu
            dx, dy = solve(lu, -rd + G.T @ ((rc - z * ri) / s), -rp)
            ds = -ri - G @ dx
            dz = (-rc - z * ds) / s
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
            if alpha == 1.0:
                alpha = min(1.0, min(_max_step(s, ds), _max_step(z, dz)))
        else:
            lu = factor(np.zeros(0))
            dx, dy = solve(lu, -rd, -rp)
            ds = dz = np.zeros(0)
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if m:
            s = np.maximum(s, 1e-300)
            z = np.maximum(z, 1e-300)
    res, x, y, z = best
    x, y, z, res = _polish(Q, q, A, b, G, h, x, y, z, res)
    return x, y, z, (OPTIMAL if res <= tol else MAX_ITER), res, it


def _residuals(Q, q, A, b, G, h, x, y, z):
    """Infinity-norm KKT residual of a normalized problem."""
    rd = Q @ x + q + A.T @ y + G.T @ z
    r = np.abs(rd).max(initial=0.0)
    if b.size:
        r = max(r, np.abs(A @ x - b).max())
    if h.size:
        slack = h - G @ x
        r = max(r, (-slack).max(), 0.0)
        r = max(r, np.abs(z * slack).max(), (-z).max())
        # multipliers on clearly inactive rows must not be what balances the gradient
        inactive = z <= slack
        if np.any(inactive):
            r = max(r, np.abs(rd - G[inactive].T @ z[inactive]).max(initial=0.0))
    return float(r)


def _polish(Q, q, A, b, G, h, x, y, z, res):
    """Re-solve the equality system of the identified active set.

    Kept only if it lowers the KKT residual; removes the small interior
    offset left by the barrier path. A second, looser active set (all rows
    with tiny slack) covers degenerate vertices where both z and the slack
    vanish.
    """
    slack = h - G @ x
    candidates = [z > np.abs(slack), slack <= _NEAR_ACTIVE]
    for active in candidates:
        xp, yp, zp = _active_set_solve(Q, q, A, b, G, h, active)
        if np.any(zp < -_NEAR_ACTIVE):
            continue
        zp = np.maximum(zp, 0.0)
        rp = _residuals(Q, q, A, b, G, h, xp, yp, zp)
        if rp < res:
            x, y, z, res = xp, yp, zp, rp
    return x, y, z, res


def _active_set_solve(Q, q, A, b, G, h, active):
    n, p = q.size, b.size
    Ga = G[active]
    k = Ga.shape[0]
    K = np.zeros((n + p + k, n + p + k))
    K[:n, :n] = Q
    K[:n, n:n + p] = A.T
    K[:n, n + p:] = Ga.T
    K[n:n + p, :n] = A
    K[n + p:, :n] = Ga
    rhs = np.concatenate([-q, b, h[active]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    zp = np.zeros(h.size)
    zp[active] = sol[n + p:]
    return sol[:n], sol[n:n + p], zp


def _has_recession_direction(Q, q, A, b, G, tol):
    """True if some d with Qd = 0, Ad = 0, Gd <= 0 has q'd < 0."""
    n = q.size
    if np.abs(Q).max(initial=0.0) <= 1e-10:
        Q = np.zeros_like(Q)
    Aeq = np.vstack([A, Q]) if A.size else Q
    Aeq, beq, _ = _independent_rows(*_normalize_rows(Aeq, np.zeros(Aeq.shape[0]))[:2])
    box = np.vstack([np.eye(n), -np.eye(n)])
    Gd = np.vstack([G, box]) if G.size else box
    hd = np.concatenate([np.zeros(G.shape[0]), np.ones(2 * n)])
    d, _, _, status, _, _ = _ipm(1e-12 * np.eye(n), q, Aeq, beq, Gd, hd, tol, 200)
    return status == OPTIMAL and q @ d < -1e3 * tol * max(1.0, np.abs(q).max())


def _phase_one_gap(A, b, G, h, tol):
    """Smallest uniform relaxation ``t`` with ``Gx <= h + t`` feasible."""
    n = A.shape[1]
    m = h.size
    if m == 0:
        return 0.0
    Gt = np.hstack([G, -np.ones((m, 1))])
    Gt = np.vstack([Gt, np.concatenate([np.zeros(n), [-1.0]])])
    ht = np.append(h, 1.0)
    At = np.hstack([A, np.zeros((A.shape[0], 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    Qt = 1e-12 * np.eye(n + 1)
    Qt[-1, -1] = 0.0
    x, _, _, status, _, _ = _ipm(Qt, c, At, b, Gt, ht, tol, 200)
    return float(x[-1])


def solve_qp(problem: QpProblem, tol: float = 1e-9, max_iter: int = 200, x0=None) -> SubsolverResult:
    """Minimize a convex quadratic over a polyhedron.

    Returns status ``infeasible`` when the constraints admit no point,
    ``unbounded`` when the objective decreases without bound and ``max_iter``
    (with the best iterate found) otherwise on non-convergence.
    """
    cons = problem.cons
    A, b, _ = _normalize_rows(cons.A_eq, cons.b_eq)
    A, b, consistent = _independent_rows(A, b)
    n = problem.n
    if not consistent:
        return SubsolverResult(np.full(n, np.nan), INFEASIBLE, np.inf, 0)
    G, h, _ = _normalize_rows(cons.A_in, cons.b_in)
    G, h = _drop_remote_rows(G, h)
    x, y, z, status, res, it = _ipm(problem.Q, problem.q, A, b, G, h, tol, max_iter, x0)
    if status != OPTIMAL:
        gap = _phase_one_gap(A, b, G, h, tol)
        if gap > 1e3 * tol:
            status = INFEASIBLE
        elif _has_recession_direction(problem.Q, problem.q, A, b, G, tol):
            status = UNBOUNDED
    return SubsolverResult(x, status, res, it, problem.objective(x), y, z)


def solve_lp(c, cons: LinearConstraintSystem, tol: float = 1e-9, max_iter: int = 200) -> SubsolverResult:
    """Linear program solved through the QP core with a 1e-12 ridge."""
    c = np.asarray(c, dtype=float).ravel()
    res = solve_qp(QpProblem(1e-12 * np.eye(c.size), c, cons), tol, max_iter)
    res.objective = float(c @ res.x)
    return res
