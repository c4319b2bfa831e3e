"""
Sample co-moment tensors and portfolio moment evaluation.

The co-skewness matrix ``phi`` is stored as an ``N x N^2`` array made of N
contiguous ``N x N`` blocks, and the co-kurtosis matrix ``psi`` as an
``N x N^3`` array made of N contiguous ``N x N^2`` blocks. Column ``a*N + b``
of ``phi`` holds ``E[r_i r_a r_b]`` for row ``i``; column ``a*N^2 + b*N + c``
of ``psi`` holds ``E[r_i r_a r_b r_c]``.

Gradients of the third and fourth moments are obtained from the Hessians via
the homogeneity relations ``grad phi3 = H3 w / 2`` and ``grad phi4 = H4 w / 3``
so a full gradient+Hessian evaluation costs a single O(N^4) contraction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, DimensionError, ResourceLimitError

DEFAULT_MAX_ASSETS = 150
_COMBO_CHUNK = 4096


@dataclass(frozen=True)
class ReturnsMatrix:
    """T x N simple returns, rows are observations."""

    data: np.ndarray
    tickers: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionError(f"returns must be a 2-D array, got shape {data.shape}")
        T, N = data.shape
        if N < 1:
            raise DimensionError("returns need at least one asset column")
        if T < 2:
            raise DimensionError(f"need at least 2 observations, got T={T}")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise DataError(f"non-finite return at row {bad[0]}, column {bad[1]}")
        tickers = tuple(self.tickers) if len(self.tickers) else tuple(f"A{i + 1}" for i in range(N))
        if len(tickers) != N:
            raise DimensionError(f"{len(tickers)} tickers for {N} return columns")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "tickers", tickers)

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    @property
    def n_assets(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MomentSet:
    """Mean, covariance, co-skewness and co-kurtosis of N assets.

    Arrays are made read-only on construction so one instance can be shared
    between concurrent solves.
    """

    mu: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        N = mu.size
        shapes = {
            "sigma": (N, N),
            "phi": (N, N * N),
            "psi": (N, N ** 3),
        }
        arrays = {"mu": mu}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            arrays[name] = arr
        for name, arr in arrays.items():
            arr = np.array(arr, dtype=float, copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_assets(self) -> int:
        return self.mu.size

    @property
    def nbytes(self) -> int:
        return self.mu.nbytes + self.sigma.nbytes + self.phi.nbytes + self.psi.nbytes

    def phi_tensor(self) -> np.ndarray:
        """View of the co-skewness as an (N, N, N) array."""
        N = self.n_assets
        return self.phi.reshape(N, N, N)

    def psi_tensor(self) -> np.ndarray:
        N = self.n_assets
        return self.psi.reshape(N, N, N, N)


@dataclass(frozen=True)
class FeasibleSet:
    """Leverage simplex ``{w : sum(w) = 1, ||w||_1 <= leverage}``."""

    leverage: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.leverage) or self.leverage < 1:
            raise ValueError(f"leverage must be >= 1, got {self.leverage}")

    def contains(self, w, tol: float = 1e-9) -> bool:
        w = np.asarray(w, dtype=float)
        return bool(abs(w.sum() - 1.0) <= tol and np.abs(w).sum() <= self.leverage + tol)

    def violation(self, w) -> float:
        """Largest violation of the budget and leverage constraints."""
        w = np.asarray(w, dtype=float)
        return max(abs(w.sum() - 1.0), np.abs(w).sum() - self.leverage, 0.0)


@dataclass(frozen=True)
class MvskSpec:
    """Nonnegative weights (mean, variance, skewness, kurtosis) of the objective."""

    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        if len(lam) != 4:
            raise ValueError(f"need four moment weights, got {len(lam)}")
        if any(not np.isfinite(x) or x < 0 for x in lam):
            raise ValueError(f"moment weights must be finite and >= 0, got {lam}")
        if not any(lam):
            raise ValueError("moment weights cannot all be zero")
        object.__setattr__(self, "lambdas", lam)

    @property
    def has_nonconvex_part(self) -> bool:
        return self.lambdas[2] > 0 or self.lambdas[3] > 0


def crra_lambdas(xi: float) -> MvskSpec:
    """Moment weights from the fourth-order expansion of CRRA utility."""
    if not np.isfinite(xi) or xi < 0:
        raise ValueError(f"risk aversion must be >= 0, got {xi}")
    return MvskSpec((1.0, xi / 2, xi * (xi + 1) / 6, xi * (xi + 1) * (xi + 2) / 24))


def _check_asset_cap(N: int, max_assets: int | None):
    if max_assets is not None and N > max_assets:
        need = 8 * N ** 4
        raise ResourceLimitError(
            f"N={N} exceeds the asset cap of {max_assets}: the co-kurtosis matrix is "
            f"O(N^4) and would need {need / 1e9:.1f} GB"
        )


def _symmetric_moment(X: np.ndarray, order: int) -> np.ndarray:
    """Dense super-symmetric tensor of mean order-fold products of columns of X.

    Each unique sorted index tuple is computed once and scattered to all of its
    permutations, so the result is exactly symmetric.
    """
    T, N = X.shape
    out = np.empty((N,) * order)
    combos = np.array(list(itertools.combinations_with_replacement(range(N), order)), dtype=np.intp)
    vals = np.empty(len(combos))
    for start in range(0, len(combos), _COMBO_CHUNK):
        idx = combos[start:start + _COMBO_CHUNK]
        prod = X[:, idx[:, 0]].copy()
        for col in range(1, order):
            prod *= X[:, idx[:, col]]
        vals[start:start + len(idx)] = prod.sum(axis=0) / T
    for perm in set(itertools.permutations(range(order))):
        out[tuple(combos[:, p] for p in perm)] = vals
    return out


def estimate_moments(r, max_assets: int | None = DEFAULT_MAX_ASSETS) -> MomentSet:
    """Sample moments with divisor T.

    ``r`` may be a :class:`ReturnsMatrix` or anything array-like of shape (T, N).
    """
    if not isinstance(r, ReturnsMatrix):
        r = ReturnsMatrix(np.asarray(r, dtype=float))
    X = r.data
    T, N = X.shape
    _check_asset_cap(N, max_assets)
    mu = X.mean(axis=0)
    Xc = X - mu
    sigma = Xc.T @ Xc / T
    sigma = (sigma + sigma.T) / 2
    phi = _symmetric_moment(Xc, 3).reshape(N, N * N)
    psi = _symmetric_moment(Xc, 4).reshape(N, N ** 3)
    return MomentSet(mu, sigma, phi, psi)


def _check_weights(w, m: MomentSet) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (m.n_assets,):
        raise DimensionError(f"weights have shape {w.shape}, moments have N={m.n_assets}")
    return w


def portfolio_moments(w, m: MomentSet) -> tuple:
    """(mean, variance, third central moment, fourth central moment) of ``w``."""
    w = _check_weights(w, m)
    N = m.n_assets
    ww = np.outer(w, w).ravel()
    phi1 = float(w @ m.mu)
    phi2 = float(w @ m.sigma @ w)
    phi3 = float(w @ (m.phi @ ww))
    psi_ww = m.psi.reshape(N * N, N * N) @ ww
    phi4 = float(ww @ psi_ww)
    return phi1, phi2, phi3, phi4


def _symmetrized(H: np.ndarray, what: str) -> np.ndarray:
    scale = np.abs(H).max()
    if scale > 0:
        asym = np.abs(H - H.T).max() / scale
        if asym > 1e-10:
            raise ArithmeticError(f"{what} asymmetry {asym:.2e} exceeds 1e-10")
    return (H + H.T) / 2


def hess_phi3(w, m: MomentSet) -> np.ndarray:
    """Hessian of the third moment; column a is ``6 Phi^(a) w``."""
    w = _check_weights(w, m)
    N = m.n_assets
    H = 6.0 * (m.phi.reshape(N * N, N) @ w).reshape(N, N)
    return _symmetrized(H, "skewness Hessian")


def hess_phi4(w, m: MomentSet) -> np.ndarray:
    """Hessian of the fourth moment; column a is ``12 Psi^(a) (w kron w)``."""
    w = _check_weights(w, m)
    N = m.n_assets
    H = 12.0 * (m.psi.reshape(N * N, N * N) @ np.outer(w, w).ravel()).reshape(N, N)
    return _symmetrized(H, "kurtosis Hessian")


def grad_phi3(w, m: MomentSet, hess: np.ndarray | None = None) -> np.ndarray:
    w = _check_weights(w, m)
    if hess is None:
        hess = hess_phi3(w, m)
    return hess @ w / 2


def grad_phi4(w, m: MomentSet, hess: np.ndarray | None = None) -> np.ndarray:
    w = _check_weights(w, m)
    if hess is None:
        hess = hess_phi4(w, m)
    return hess @ w / 3


@dataclass
class HigherOrderTerms:
    """Gradients and Hessians of the third and fourth moments at one point."""

    w: np.ndarray
    phi3: float
    phi4: float
    grad3: np.ndarray
    grad4: np.ndarray
    hess3: np.ndarray
    hess4: np.ndarray


def higher_order_terms(w, m: MomentSet) -> HigherOrderTerms:
    """One O(N^4) pass giving values, gradients and Hessians of phi3 and phi4."""
    w = _check_weights(w, m)
    H3 = hess_phi3(w, m)
    H4 = hess_phi4(w, m)
    g3 = H3 @ w / 2
    g4 = H4 @ w / 3
    return HigherOrderTerms(w, float(w @ g3) / 3, float(w @ g4) / 4, g3, g4, H3, H4)


@dataclass
class ObjectiveValue:
    f: float
    grad: np.ndarray
    f_cvx: float
    f_ncvx: float
    grad_ncvx: np.ndarray
    moments: tuple = field(default=())


def mvsk_objective(w, m: MomentSet, spec: MvskSpec, terms: HigherOrderTerms | None = None) -> ObjectiveValue:
    """Value and gradient of ``-l1 phi1 + l2 phi2 - l3 phi3 + l4 phi4``.

    Also returns the convex (mean/variance) and nonconvex (skew/kurtosis)
    parts separately.
    """
    w = _check_weights(w, m)
    l1, l2, l3, l4 = spec.lambdas
    phi1 = float(w @ m.mu)
    sw = m.sigma @ w
    phi2 = float(w @ sw)
    if spec.has_nonconvex_part:
        if terms is None:
            terms = higher_order_terms(w, m)
        phi3, phi4 = terms.phi3, terms.phi4
        grad_ncvx = -l3 * terms.grad3 + l4 * terms.grad4
    else:
        phi3, phi4 = portfolio_moments(w, m)[2:]
        grad_ncvx = np.zeros_like(w)
    f_cvx = -l1 * phi1 + l2 * phi2
    f_ncvx = -l3 * phi3 + l4 * phi4
    grad = -l1 * m.mu + 2 * l2 * sw + grad_ncvx
    return ObjectiveValue(f_cvx + f_ncvx, grad, f_cvx, f_ncvx, grad_ncvx, (phi1, phi2, phi3, phi4))


def mvsk_value(w, m: MomentSet, spec: MvskSpec) -> float:
    phi = portfolio_moments(w, m)
    l1, l2, l3, l4 = spec.lambdas
    return -l1 * phi[0] + l2 * phi[1] - l3 * phi[2] + l4 * phi[3]


def hess_ncvx(w, m: MomentSet, spec: MvskSpec, terms: HigherOrderTerms | None = None) -> np.ndarray:
    """Hessian of the skewness/kurtosis part of the objective."""
    if terms is None:
        terms = higher_order_terms(w, m)
    _, _, l3, l4 = spec.lambdas
    return -l3 * terms.hess3 + l4 * terms.hess4


def moments_footprint(n_assets: int) -> int:
    """Bytes needed to hold a dense MomentSet for ``n_assets``."""
    N = n_assets
    return 8 * (N + N * N + N ** 3 + N ** 4)


def tickers_or_default(tickers: Sequence[str] | None, n: int) -> list:
    return list(tickers) if tickers else [f"A{i + 1}" for i in range(n)]
