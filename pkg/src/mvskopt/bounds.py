"""Curvature constants for the majorizing surrogates and the nearest-PSD projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .moments import FeasibleSet, MomentSet, MvskSpec


@dataclass(frozen=True)
class CurvatureConstants:
    tau_dc: float
    tau_mm: float


def _dc_tensor_sums(m: MomentSet) -> tuple:
    return np.abs(m.phi).sum(axis=1).max(), np.abs(m.psi).sum(axis=1).max()


def dc_tau_high_order(m: MomentSet, spec: MvskSpec, fs: FeasibleSet) -> float:
    """Skewness and kurtosis terms of :func:`dc_tau`."""
    _, _, l3, l4 = spec.lambdas
    L = fs.leverage
    s3, s4 = _dc_tensor_sums(m)
    return float(6 * l3 * L * s3 + 12 * l4 * L ** 2 * s4)


def dc_tau(m: MomentSet, spec: MvskSpec, fs: FeasibleSet) -> float:
    """Upper bound on the spectral radius of the full objective Hessian over the feasible set.

    ``||Sigma||_inf`` is the maximum absolute row sum.
    """
    l2 = spec.lambdas[1]
    sigma_inf = np.abs(m.sigma).sum(axis=1).max()
    return float(2 * l2 * sigma_inf) + dc_tau_high_order(m, spec, fs)


def mm_tau(m: MomentSet, spec: MvskSpec, fs: FeasibleSet) -> float:
    """Tighter bound on the spectral radius of the skewness/kurtosis Hessian only."""
    _, _, l3, l4 = spec.lambdas
    L = fs.leverage
    N = m.n_assets
    s3 = np.abs(m.phi.reshape(N, N, N)).max(axis=2).sum(axis=1).max()
    s4 = np.abs(m.psi.reshape(N, N, N * N)).max(axis=2).sum(axis=1).max()
    return float(6 * l3 * L * s3 + 12 * l4 * L ** 2 * s4)


def curvature_constants(m: MomentSet, spec: MvskSpec, fs: FeasibleSet) -> CurvatureConstants:
    return CurvatureConstants(dc_tau(m, spec, fs), mm_tau(m, spec, fs))


def nearest_psd(a) -> np.ndarray:
    """Nearest symmetric PSD matrix in Frobenius norm (negative eigenvalues clamped to 0)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError("nearest_psd: matrix has non-finite entries")
    a = (a + a.T) / 2
    d, U = np.linalg.eigh(a)
    if np.all(d >= 0):
        return a
    out = (U * np.maximum(d, 0.0)) @ U.T
    return (out + out.T) / 2
