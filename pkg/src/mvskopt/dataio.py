"""Returns CSV ingestion, synthetic return generation and the binary moment layout."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError
from .moments import MomentSet, ReturnsMatrix

_HEADER = struct.Struct("<Q")


def read_returns_csv(path) -> ReturnsMatrix:
    """Read a returns file: ticker header row, then one row of returns per period.

    Raises :class:`DataError` naming the 1-based file line and column of the
    first bad cell.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    tickers = [t.strip() for t in rows[0]]
    if not tickers or any(not t for t in tickers):
        raise DataError(f"{path}: line 1: header must name every column")
    N = len(tickers)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != N:
            raise DataError(f"{path}: line {lineno}: expected {N} fields, got {len(row)}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}, column {col} ({tickers[col - 1]}): "
                    f"not a number: {cell!r}"
                ) from None
            if not np.isfinite(v):
                raise DataError(f"{path}: line {lineno}, column {col}: non-finite value {cell!r}")
            vals.append(v)
        data.append(vals)
    if len(data) < 2:
        raise DimensionError(f"{path}: need at least 2 return rows, got {len(data)}")
    return ReturnsMatrix(np.array(data), tuple(tickers))


def write_returns_csv(path, r: ReturnsMatrix):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(r.tickers)
        for row in r.data:
            writer.writerow([repr(float(x)) for x in row])


def save_moments(path, m: MomentSet):
    """Flat little-endian layout: uint64 N, then mu, sigma, phi, psi as float64."""
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(m.n_assets))
        for arr in (m.mu, m.sigma, m.phi, m.psi):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_moments(path) -> MomentSet:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated moment file")
    (N,) = _HEADER.unpack_from(raw)
    sizes = [N, N * N, N ** 3, N ** 4]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for N={N}, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return MomentSet(parts[0], parts[1].reshape(N, N), parts[2].reshape(N, N * N), parts[3].reshape(N, N ** 3))


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and shock controls for generated returns.

    ``skew`` is the target skewness of each standardized shock (0 gives
    symmetric Student-t shocks), ``tail_df`` the degrees of freedom of the
    symmetric case, and ``condition`` the condition number of the loading
    matrix.
    """

    n_assets: int
    n_obs: int | None = None
    seed: int = 0
    skew: float = 1.0
    tail_df: float = 6.0
    scale: float = 0.02
    condition: float = 10.0

    def __post_init__(self):
        if self.n_assets < 2:
            raise ValueError(f"need at least 2 assets, got {self.n_assets}")
        if self.n_obs is None:
            object.__setattr__(self, "n_obs", 5 * self.n_assets)
        if self.n_obs < self.n_assets:
            raise ValueError(f"need T >= N, got T={self.n_obs} < N={self.n_assets}")
        if self.tail_df <= 4:
            raise ValueError("tail_df must exceed 4 for a finite kurtosis")


def _standardized_shocks(rng: np.random.Generator, shape, skew: float, tail_df: float) -> np.ndarray:
    if skew == 0:
        z = rng.standard_t(tail_df, size=shape)
        return z / np.sqrt(tail_df / (tail_df - 2))
    # A gamma(k) variable has skewness 2/sqrt(k) and excess kurtosis 6/k.
    k = (2.0 / abs(skew)) ** 2
    z = (rng.gamma(k, size=shape) - k) / np.sqrt(k)
    return np.sign(skew) * z


def generate_returns(spec: SyntheticSpec) -> ReturnsMatrix:
    """``r_t = mu + B z_t`` with iid standardized shifted-gamma (or t) shocks."""
    rng = np.random.default_rng(spec.seed)
    N, T = spec.n_assets, spec.n_obs
    mu = rng.normal(0.0005, 0.0005, size=N)
    U, _ = np.linalg.qr(rng.standard_normal((N, N)))
    V, _ = np.linalg.qr(rng.standard_normal((N, N)))
    sv = np.geomspace(1.0, 1.0 / spec.condition, N)
    B = spec.scale * (U * sv) @ V.T
    z = _standardized_shocks(rng, (T, N), spec.skew, spec.tail_df)
    data = mu + z @ B.T
    return ReturnsMatrix(data, tuple(f"S{i + 1:03d}" for i in range(N)))
