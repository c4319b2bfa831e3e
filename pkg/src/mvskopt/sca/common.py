"""Step schedule, stopping rule, options and the per-run report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..moments import FeasibleSet
from ..subsolvers import PortfolioBlock, QpProblem, solve_qp

CONVERGED = "converged"
MAX_ITER = "max_iter"

TRACE_COLUMNS = ("k", "objective", "gamma", "eta", "max_violation", "stationarity", "wall_ms")


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing steps ``g_k = g_{k-1} (1 - decay g_{k-1})``."""

    gamma0: float = 1.0
    decay: float = 1e-2

    def __post_init__(self):
        if not 0 < self.gamma0 <= 1:
            raise ValueError(f"gamma0 must lie in (0, 1], got {self.gamma0}")
        if not 0 < self.decay < 1:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")

    def __iter__(self):
        g = self.gamma0
        while True:
            yield g
            g = g * (1 - self.decay * g)

    def at(self, k: int) -> float:
        if k < 0:
            raise ValueError(f"k must be >= 0, got {k}")
        g = self.gamma0
        for _ in range(k):
            g = g * (1 - self.decay * g)
        return g


def step_size(k: int, schedule: StepSchedule = StepSchedule()) -> float:
    return schedule.at(k)


def stop_check(x_prev, x_next, f_prev: float, f_next: float, tol: float = 1e-6) -> bool:
    """Relative change test on the iterate (every entry) or on the objective."""
    x_prev = np.asarray(x_prev, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    dx = np.abs(x_next - x_prev)
    if np.all(dx <= tol * (np.abs(x_next) + np.abs(x_prev))):
        return True
    return abs(f_next - f_prev) <= tol * (abs(f_next) + abs(f_prev))


@dataclass
class SolveOptions:
    """Knobs shared by all five solvers; ``None`` means the algorithm default."""

    max_iter: int | None = None
    tol: float = 1e-6
    sub_tol: float = 1e-9
    stat_tol: float = 1e-5
    schedule: StepSchedule = field(default_factory=StepSchedule)
    tau_w: float | None = None
    w_init: np.ndarray | None = None
    record_stationarity: bool = True

    def __post_init__(self):
        for name in ("tol", "sub_tol", "stat_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0, got {v}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tau_w is not None and not (np.isfinite(self.tau_w) and self.tau_w >= 0):
            raise ValueError(f"tau_w must be >= 0, got {self.tau_w}")


@dataclass
class IterationRecord:
    k: int
    objective: float
    gamma: float
    eta: float = 0.0
    max_violation: float = 0.0
    stationarity: float = 0.0
    wall_ms: float = 0.0

    def __post_init__(self):
        for name in TRACE_COLUMNS:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite {name} in iteration record: {v}")

    def row(self) -> list:
        return [getattr(self, c) for c in TRACE_COLUMNS]


@dataclass
class SolveReport:
    method: str
    w_final: np.ndarray
    objective: float
    termination: str
    trace: list
    subsolver_calls: int
    moments: tuple = ()
    max_violation: float = 0.0
    stationarity: float = float("nan")
    delta_final: float | None = None

    @property
    def converged(self) -> bool:
        return self.termination == CONVERGED

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.trace])

    def to_dict(self) -> dict:
        """JSON-ready summary. Timing is left to the trace so reports are reproducible."""
        out = {
            "method": self.method,
            "termination": self.termination,
            "iterations": self.iterations,
            "subsolver_calls": self.subsolver_calls,
            "objective": self.objective,
            "w_final": [float(v) for v in self.w_final],
            "moments": dict(zip(("mean", "variance", "skewness", "kurtosis"),
                                (float(v) for v in self.moments))),
            "max_violation": self.max_violation,
            "stationarity": self.stationarity,
        }
        if self.delta_final is not None:
            out["delta_final"] = self.delta_final
        return out

    def write_json(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_trace_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.trace:
                w.writerow([r.k] + [repr(float(v)) for v in r.row()[1:]])


def project_onto_feasible(v, fs: FeasibleSet, tol: float = 1e-10) -> np.ndarray:
    """Euclidean projection onto the leverage simplex via a QP."""
    v = np.asarray(v, dtype=float)
    block = PortfolioBlock(v.size, fs.leverage)
    nb = block.size
    P = np.zeros((nb, nb))
    P[:v.size, :v.size] = np.eye(v.size)
    p = np.zeros(nb)
    p[:v.size] = -v
    res = solve_qp(QpProblem(P, p, block.system()), tol=tol)
    return res.x[:v.size]


def projected_gradient_residual(w, grad, fs: FeasibleSet) -> float:
    """``||w - Proj(w - grad)||_inf``; zero exactly at stationary points."""
    w = np.asarray(w, dtype=float)
    return float(np.abs(w - project_onto_feasible(w - grad, fs)).max())


def default_start(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)
