"""
Log-barrier method for convex quadratically constrained QPs.

Problem form::

    minimize    1/2 x'Q0 x + q0'x + c0
    subject to  1/2 x'Qi x + qi'x + ci <= 0,   i = 1..K   (Qi PSD)
                A_eq x = b_eq,  A_in x <= b_in

Outer loop multiplies the barrier weight by ``mu_factor`` until the duality
gap bound ``m / t`` drops below ``tol``; each stage is centered by damped
Newton steps with backtracking on the barrier potential. A strictly feasible
start is found by a phase-I problem on the same machinery when the caller
does not supply one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .constraints import LinearConstraintSystem
from .qp import (INFEASIBLE, MAX_ITER, OPTIMAL, SubsolverResult, _drop_remote_rows, _independent_rows,
                 _normalize_rows)


@dataclass
class QuadraticConstraint:
    """``1/2 x'Qx + q'x + c <= 0``."""

    Q: np.ndarray
    q: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.Q = np.asarray(self.Q, dtype=float)
        self.Q = (self.Q + self.Q.T) / 2
        self.c = float(self.c)

    def value(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.c)

    def grad(self, x) -> np.ndarray:
        return self.Q @ x + self.q

    def scaled(self, factor: float) -> "QuadraticConstraint":
        return QuadraticConstraint(self.Q * factor, self.q * factor, self.c * factor)


@dataclass
class QcqpProblem:
    Q0: np.ndarray
    q0: np.ndarray
    quad: list
    cons: LinearConstraintSystem
    c0: float = 0.0

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).ravel()
        n = self.q0.size
        self.Q0 = np.asarray(self.Q0, dtype=float)
        if self.Q0.shape != (n, n):
            raise ValueError(f"Q0 has shape {self.Q0.shape}, expected ({n}, {n})")
        self.Q0 = (self.Q0 + self.Q0.T) / 2
        quad = []
        for qc in self.quad:
            if not isinstance(qc, QuadraticConstraint):
                qc = QuadraticConstraint(*qc)
            if qc.Q.shape != (n, n) or qc.q.size != n:
                raise ValueError("quadratic constraint dimension mismatch")
            d = np.linalg.eigvalsh(qc.Q)
            if d.min(initial=0.0) < -1e-9 * max(1.0, np.abs(d).max(initial=0.0)):
                raise ValueError("quadratic constraint matrix is not PSD")
            quad.append(qc)
        self.quad = quad
        if self.cons.n != n:
            raise ValueError(f"constraints have {self.cons.n} variables, objective has {n}")

    @property
    def n(self) -> int:
        return self.q0.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q0 @ x + self.q0 @ x + self.c0)

    def max_violation(self, x) -> float:
        v = self.cons.residual(x)
        for qc in self.quad:
            v = max(v, qc.value(x))
        return float(max(v, 0.0))


@dataclass
class BarrierTrace:
    stage_objectives: list = field(default_factory=list)
    newton_steps: int = 0
    phase_one_steps: int = 0


class _Barrier:
    """Barrier potential ``t f0 - sum log(-fi) - sum log(h - Gx)`` on normalized data."""

    def __init__(self, Q0, q0, quads, G, h, A, b):
        self.Q0, self.q0 = Q0, q0
        self.quads = quads
        self.G, self.h = G, h
        self.A, self.b = A, b
        self.m = len(quads) + h.size

    def slacks(self, x):
        fq = np.array([-qc.value(x) for qc in self.quads])
        fl = self.h - self.G @ x
        return fq, fl

    def strictly_feasible(self, x) -> bool:
        fq, fl = self.slacks(x)
        return bool(np.all(fq > 0) and np.all(fl > 0))

    def potential(self, x, t):
        fq, fl = self.slacks(x)
        if np.any(fq <= 0) or np.any(fl <= 0):
            return np.inf
        return t * (0.5 * x @ self.Q0 @ x + self.q0 @ x) - np.log(fq).sum() - np.log(fl).sum()

    def derivatives(self, x, t):
        fq, fl = self.slacks(x)
        g = t * (self.Q0 @ x + self.q0)
        H = t * self.Q0
        for qc, sl in zip(self.quads, fq):
            gi = qc.grad(x)
            g = g + gi / sl
            H = H + qc.Q / sl + np.outer(gi, gi) / sl ** 2
        if fl.size:
            g = g + self.G.T @ (1.0 / fl)
            H = H + (self.G.T / fl ** 2) @ self.G
        return g, H

    def newton_step(self, x, t):
        g, H = self.derivatives(x, t)
        n, p = x.size, self.b.size
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H + 1e-14 * max(1.0, np.abs(H).max()) * np.eye(n)
        K[:n, n:] = self.A.T
        K[n:, :n] = self.A
        rhs = np.concatenate([-g, self.b - self.A @ x])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dx, v = sol[:n], sol[n:]
        dec = float(dx @ H @ dx)
        return dx, v, g, dec

    def center(self, x, t, max_steps, trace, eps=1e-14, floor=1e-8):
        """Newton centering to a decrement of ``eps`` relative to the potential.

        Stalls with a decrement below ``floor`` count as converged.
        """
        v = np.zeros(self.b.size)
        for _ in range(max_steps):
            dx, v, g, dec = self.newton_step(x, t)
            phi0 = self.potential(x, t)
            if dec / 2 <= eps * (1.0 + abs(phi0)):
                return x, v, True
            step = 1.0
            slope = float(g @ dx)
            while step > 1e-20:
                xn = x + step * dx
                val = self.potential(xn, t)
                if np.isfinite(val) and val <= phi0 + 0.25 * step * slope:
                    break
                step *= 0.5
            else:
                return x, v, dec / 2 <= floor
            trace.newton_steps += 1
            if np.array_equal(xn, x):
                return x, v, dec / 2 <= floor
            x = xn
        return x, v, dec / 2 <= floor

    def initial_t(self, x):
        g0 = self.Q0 @ x + self.q0
        gb, Hb = self.derivatives(x, 0.0)
        try:
            Hi_g0 = np.linalg.solve(Hb + 1e-12 * np.eye(x.size), g0)
        except np.linalg.LinAlgError:
            return 1.0
        denom = float(g0 @ Hi_g0)
        if denom <= 0:
            return 1.0
        t = -float(gb @ Hi_g0) / denom
        return float(np.clip(t, 1e-6, 1e6)) if t > 0 else 1.0

    def _active(self, x, t, slack):
        """Scale-free active test: normalized multiplier above normalized slack."""
        norms = np.array([np.linalg.norm(qc.grad(x)) for qc in self.quads]
                         + [1.0] * self.h.size)
        norms = np.maximum(norms, 1e-300)
        lam = 1.0 / (t * np.maximum(slack, 1e-300))
        return lam * norms > slack / norms

    def kkt_residual(self, x, t):
        """Stationarity and complementarity with multipliers refit on the active set.

        Barrier multipliers ``1/(t * slack)`` inherit the cancellation error of
        slacks near 1/t, so the active ones are re-estimated by NNLS.
        """
        fq, fl = self.slacks(x)
        grads = [qc.grad(x) for qc in self.quads] + list(self.G)
        slack = np.concatenate([fq, fl])
        active = self._active(x, t, slack)
        g0 = self.Q0 @ x + self.q0
        cols = [grads[i] for i in np.flatnonzero(active)]
        n_act = len(cols)
        cols += list(self.A) + list(-self.A)
        if cols:
            M = np.array(cols).T
            coef, _ = scipy.optimize.nnls(M, -g0, maxiter=50 * M.shape[1])
            r = g0 + M @ coef
            comp = np.abs(coef[:n_act] * slack[active]).max(initial=0.0)
        else:
            r, comp = g0, 0.0
        return float(max(np.abs(r).max(initial=0.0), comp))

    def polish(self, x, t, iters=8):
        """Newton on the KKT equations with the barrier's active set held as equalities.

        Returns ``None`` if the active set is wrong (negative multiplier or an
        inactive constraint violated) or the iteration fails to settle.
        """
        fq, fl = self.slacks(x)
        slack = np.concatenate([fq, fl])
        lam = 1.0 / (t * np.maximum(slack, 1e-300))
        active = np.flatnonzero(self._active(x, t, slack))
        nq = len(self.quads)
        aq = [i for i in active if i < nq]
        al = [i - nq for i in active if i >= nq]
        n, p, k = x.size, self.b.size, active.size
        y = np.concatenate([lam[active], np.zeros(p)])
        for _ in range(iters):
            lq, ll, nu = y[:len(aq)], y[len(aq):k], y[k:]
            grads = np.array([self.quads[i].grad(x) for i in aq] + [self.G[i] for i in al]).reshape(k, n)
            H = self.Q0.copy()
            for li, i in zip(lq, aq):
                H = H + li * self.quads[i].Q
            r1 = self.Q0 @ x + self.q0 + grads.T @ y[:k] + self.A.T @ nu
            r2 = np.array([self.quads[i].value(x) for i in aq] + [self.G[i] @ x - self.h[i] for i in al])
            r3 = self.A @ x - self.b
            F = np.concatenate([r1, r2, r3])
            if np.abs(F).max(initial=0.0) <= 1e-15 * (1 + np.abs(x).max()):
                break
            J = np.zeros((n + k + p, n + k + p))
            J[:n, :n] = H
            J[:n, n:n + k] = grads.T
            J[:n, n + k:] = self.A.T
            J[n:n + k, :n] = grads
            J[n + k:, :n] = self.A
            d = np.linalg.lstsq(J, -F, rcond=None)[0]
            x = x + d[:n]
            y = y + d[n:]
            if not np.all(np.isfinite(x)):
                return None
        # degenerate vertices leave zero multipliers at rounding level; the
        # caller's NNLS refit decides whether the point is truly stationary
        if np.any(y[:k] < -1e-6 * max(1.0, np.abs(y[:k]).max(initial=0.0))):
            return None
        return x


def _run_barrier(bar: _Barrier, x, tol, max_newton, mu_factor, trace, stop=None):
    t = bar.initial_t(x)
    if bar.m == 0:
        x, v, ok = bar.center(x, 1.0, max_newton, trace)
        return x, v, 1.0, ok
    ok = True
    while True:
        budget = max_newton - trace.newton_steps
        if budget <= 0:
            return x, np.zeros(bar.b.size), t, False
        x, v, ok = bar.center(x, t, min(budget, 100), trace)
        trace.stage_objectives.append(float(0.5 * x @ bar.Q0 @ x + bar.q0 @ x))
        if stop is not None:
            hit = stop(x, t)
            if hit is not None:
                return hit, v, t, True
        if bar.m / t <= tol:
            return x, v, t, ok
        t *= mu_factor


def _strict_start(G, h, A, b, quads, x0, tol, max_newton, trace):
    """Phase I: minimize s subject to every inequality <= s and s >= -1.

    A small proximal term keeps the centers bounded when the feasible set is
    unbounded; the first centered point with s < 0 is returned.
    """
    n = A.shape[1]
    if x0 is None:
        x = np.linalg.lstsq(A, b, rcond=None)[0] if b.size else np.zeros(n)
    else:
        x = np.asarray(x0, dtype=float).copy()
        if b.size:
            x = x + np.linalg.lstsq(A, b - A @ x, rcond=None)[0]
    bar_probe = _Barrier(np.zeros((n, n)), np.zeros(n), quads, G, h, A, b)
    if bar_probe.strictly_feasible(x):
        return x
    fq, fl = bar_probe.slacks(x)
    worst = float(max((-fq).max(initial=-np.inf), (-fl).max(initial=-np.inf)))
    s0 = max(worst, -0.5) + 1.0
    quads1 = [QuadraticConstraint(np.pad(qc.Q, ((0, 1), (0, 1))), np.append(qc.q, -1.0), qc.c)
              for qc in quads]
    G1 = np.vstack([np.hstack([G, -np.ones((G.shape[0], 1))]), np.append(np.zeros(n), -1.0)])
    h1 = np.append(h, 1.0)
    A1 = np.hstack([A, np.zeros((A.shape[0], 1))])
    prox = 1e-6
    Q1 = np.zeros((n + 1, n + 1))
    Q1[:n, :n] = prox * np.eye(n)
    c = np.append(-prox * x, 1.0)
    bar = _Barrier(Q1, c, quads1, G1, h1, A1, b)
    xs = np.append(x, s0)
    xs, _, _, _ = _run_barrier(bar, xs, min(tol, 1e-12), max_newton, 10.0, trace,
                               stop=lambda z, t: z if z[-1] < 0 else None)
    if xs[-1] < 0 and bar_probe.strictly_feasible(xs[:n]):
        return xs[:n]
    return None


def solve_qcqp(problem: QcqpProblem, tol: float = 1e-9, max_iter: int = 500, x0=None,
               mu_factor: float = 10.0) -> SubsolverResult:
    """Solve a convex QCQP to a duality-gap bound of ``tol``.

    ``max_iter`` caps the total number of Newton steps including phase I.
    The result carries a :class:`BarrierTrace` in ``result.trace``.
    """
    cons = problem.cons
    n = problem.n
    A, b, _ = _normalize_rows(cons.A_eq, cons.b_eq)
    A, b, consistent = _independent_rows(A, b)
    if not consistent:
        return SubsolverResult(np.full(n, np.nan), INFEASIBLE, np.inf, 0)
    G, h, _ = _normalize_rows(cons.A_in, cons.b_in)
    G, h = _drop_remote_rows(G, h)
    quads = []
    for qc in problem.quad:
        scale = max(np.abs(qc.Q).max(initial=0.0), np.abs(qc.q).max(initial=0.0))
        quads.append(qc.scaled(1.0 / scale) if scale > 0 else qc)
    trace = BarrierTrace()
    x = _strict_start(G, h, A, b, quads, x0, tol, max_iter, trace)
    if x is None:
        return SubsolverResult(np.full(n, np.nan), INFEASIBLE, np.inf, trace.newton_steps, trace=trace)
    bar = _Barrier(problem.Q0, problem.q0, quads, G, h, A, b)
    phase_one = trace.newton_steps
    trace.stage_objectives.clear()
    polished = []

    def try_polish(xc, t):
        if bar.m / t > 1e-3:
            return None
        xp = bar.polish(xc, t)
        if xp is None:
            return None
        kp = max(bar.kkt_residual(xp, t), problem.max_violation(xp))
        if kp <= tol:
            polished.append(kp)
            return xp
        return None

    x, v, t, ok = _run_barrier(bar, x, tol, max_iter, mu_factor, trace, stop=try_polish)
    if polished:
        kkt = polished[-1]
    else:
        gap = bar.m / t if bar.m else 0.0
        kkt = max(gap, bar.kkt_residual(x, t), problem.max_violation(x))
    status = OPTIMAL if kkt <= tol else MAX_ITER
    trace.phase_one_steps = phase_one
    return SubsolverResult(x, status, kkt, trace.newton_steps, problem.objective(x), trace=trace)
