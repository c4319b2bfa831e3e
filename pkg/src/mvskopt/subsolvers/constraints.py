"""Linear constraint systems and the l1 lifting of the leverage simplex."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError


def _as_matrix(a, n_cols: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n_cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] == 0 or a.size == 0:
        return np.zeros((0, n_cols))
    return a


@dataclass
class LinearConstraintSystem:
    """``A_eq x = b_eq`` and ``A_in x <= b_in`` over ``n`` variables."""

    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray

    def __post_init__(self):
        n = None
        for a in (self.A_eq, self.A_in):
            if a is None:
                continue
            a = np.asarray(a, dtype=float)
            if a.ndim == 2 or a.size:
                n = np.atleast_2d(a).shape[1]
                break
        if n is None:
            raise DimensionError("constraint system needs at least one nonempty matrix to fix n")
        self.A_eq = _as_matrix(self.A_eq, n)
        self.A_in = _as_matrix(self.A_in, n)
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=float).ravel()
        self.b_in = np.asarray(self.b_in if self.b_in is not None else [], dtype=float).ravel()
        if self.A_eq.shape[1] != n or self.A_in.shape[1] != n:
            raise DimensionError("equality and inequality matrices disagree on variable count")
        if self.A_eq.shape[0] != self.b_eq.size or self.A_in.shape[0] != self.b_in.size:
            raise DimensionError("row counts do not match right-hand sides")
        for arr in (self.A_eq, self.b_eq, self.A_in, self.b_in):
            if not np.all(np.isfinite(arr)):
                raise ValueError("constraint data must be finite")

    @property
    def n(self) -> int:
        return self.A_eq.shape[1]

    @classmethod
    def empty(cls, n: int) -> "LinearConstraintSystem":
        return cls(np.zeros((0, n)), [], np.zeros((0, n)), [])

    def residual(self, x) -> float:
        """Largest equality or inequality violation at ``x``."""
        x = np.asarray(x, dtype=float)
        r = 0.0
        if self.b_eq.size:
            r = max(r, np.abs(self.A_eq @ x - self.b_eq).max())
        if self.b_in.size:
            r = max(r, (self.A_in @ x - self.b_in).max())
        return float(max(r, 0.0))

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.residual(x) <= tol

    def embed(self, n_total: int, offset: int = 0) -> "LinearConstraintSystem":
        """Same constraints over a larger variable vector, starting at ``offset``."""
        if offset + self.n > n_total:
            raise DimensionError("embedding does not fit")

        def widen(a):
            out = np.zeros((a.shape[0], n_total))
            out[:, offset:offset + self.n] = a
            return out

        return LinearConstraintSystem(widen(self.A_eq), self.b_eq, widen(self.A_in), self.b_in)

    def add_eq(self, row, rhs: float) -> "LinearConstraintSystem":
        row = np.asarray(row, dtype=float).reshape(1, -1)
        return LinearConstraintSystem(
            np.vstack([self.A_eq, row]), np.append(self.b_eq, rhs), self.A_in, self.b_in
        )

    def add_ineq(self, row, rhs: float) -> "LinearConstraintSystem":
        row = np.asarray(row, dtype=float).reshape(1, -1)
        return LinearConstraintSystem(
            self.A_eq, self.b_eq, np.vstack([self.A_in, row]), np.append(self.b_in, rhs)
        )


def lift_l1(n: int, leverage: float) -> LinearConstraintSystem:
    """Leverage simplex over ``(w, u)``: ``1'w = 1, -u <= w <= u, 1'u <= L``."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if not np.isfinite(leverage) or leverage < 1:
        raise ValueError(f"leverage must be >= 1, got {leverage}")
    I = np.eye(n)
    A_eq = np.hstack([np.ones((1, n)), np.zeros((1, n))])
    A_in = np.vstack([
        np.hstack([I, -I]),
        np.hstack([-I, -I]),
        np.hstack([np.zeros((1, n)), np.ones((1, n))]),
    ])
    b_in = np.concatenate([np.zeros(2 * n), [leverage]])
    return LinearConstraintSystem(A_eq, [1.0], A_in, b_in)


def simplex_system(n: int) -> LinearConstraintSystem:
    """Long-only simplex ``1'w = 1, w >= 0``."""
    return LinearConstraintSystem(np.ones((1, n)), [1.0], -np.eye(n), np.zeros(n))


@dataclass(frozen=True)
class PortfolioBlock:
    """Variable layout of the portfolio feasible set inside a subproblem.

    With ``leverage == 1`` the set is the plain simplex and needs no auxiliary
    variables; otherwise ``n`` extra variables ``u`` bound ``|w|``.
    """

    n_assets: int
    leverage: float

    @property
    def lifted(self) -> bool:
        return self.leverage > 1

    @property
    def size(self) -> int:
        return 2 * self.n_assets if self.lifted else self.n_assets

    def system(self) -> LinearConstraintSystem:
        if self.lifted:
            return lift_l1(self.n_assets, self.leverage)
        return simplex_system(self.n_assets)

    def start(self, w) -> np.ndarray:
        """Interior-ish value of the block variables for a feasible ``w``."""
        w = np.asarray(w, dtype=float)
        if not self.lifted:
            return w.copy()
        slack = max(self.leverage - np.abs(w).sum(), 0.0)
        return np.concatenate([w, np.abs(w) + slack / (2 * self.n_assets)])
