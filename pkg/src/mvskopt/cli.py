"""
Command-line front end.

    mvskopt gen-data --n-assets 10 --seed 7 --out returns.csv
    mvskopt moments returns.csv --out moments.bin
    mvskopt solve --input moments.bin --kind mvsk --method qmvsk --xi 10 --report out.json
    mvskopt bench --sizes 10,20 --methods dc,mm,qmvsk --reps 5 --out bench.csv

Exit codes: 0 converged, 1 usage error, 2 data error, 3 resource guard,
4 iteration limit reached.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import SyntheticSpec, generate_returns, load_moments, read_returns_csv, save_moments, write_returns_csv
from .errors import DataError, DimensionError, ResourceLimitError, SubsolverError
from .moments import (DEFAULT_MAX_ASSETS, FeasibleSet, MvskSpec, crra_lambdas, estimate_moments,
                      moments_footprint)
from .sca import (SolveOptions, StepSchedule, default_tilting, solve_mvsk_dc, solve_mvsk_mm,
                  solve_mvsk_q, solve_tilting_l, solve_tilting_q)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RESOURCE = 3
EXIT_MAX_ITER = 4

CONFIG_VERSION = 1
CONFIG_SECTION = "mvskopt"

METHODS = {
    "mvsk": ("dc", "mm", "qmvsk"),
    "tilting": ("lmvskt", "qmvskt"),
}
SOLVERS = {
    "dc": solve_mvsk_dc,
    "mm": solve_mvsk_mm,
    "qmvsk": solve_mvsk_q,
    "lmvskt": solve_tilting_l,
    "qmvskt": solve_tilting_q,
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a solve or bench run needs. ``input`` empty means synthetic data."""

    input: str = ""
    n_assets: int = 10
    n_obs: int | None = None
    seed: int = 0
    skew: float = 1.0
    kind: str = "mvsk"
    method: str = "qmvsk"
    xi: float = 10.0
    lambdas: tuple | None = None
    leverage: float = 1.0
    c: float = 0.5
    theta: float = 0.5
    tau_w: float | None = None
    tau_delta: float = 1e-5
    tol: float = 1e-6
    sub_tol: float = 1e-9
    stat_tol: float = 1e-5
    max_iter: int | None = None
    max_assets: int = DEFAULT_MAX_ASSETS
    report: str = ""
    trace: str = ""
    sizes: tuple = (10, 20)
    methods: tuple = ("dc", "mm", "qmvsk")
    reps: int = 5
    out: str = ""

    def validate(self, bench: bool = False):
        if self.kind not in METHODS:
            raise UsageError(f"unknown problem kind {self.kind!r}; choose from {sorted(METHODS)}")
        methods = self.methods if bench else (self.method,)
        for meth in methods:
            if meth not in SOLVERS:
                raise UsageError(f"unknown method {meth!r}; choose from {sorted(SOLVERS)}")
            if meth not in METHODS[self.kind]:
                raise UsageError(
                    f"method {meth!r} does not solve kind {self.kind!r} "
                    f"(valid: {', '.join(METHODS[self.kind])})")
        for name in ("tol", "sub_tol", "stat_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise UsageError(f"{name} must be > 0, got {v}")
        if self.max_iter is not None and self.max_iter < 1:
            raise UsageError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.lambdas is not None and len(self.lambdas) != 4:
            raise UsageError(f"lambdas needs 4 values, got {len(self.lambdas)}")
        if self.xi < 0 or self.c < 0 or self.leverage < 1:
            raise UsageError("xi and c must be >= 0 and leverage >= 1")
        if not 0 < self.theta < 1:
            raise UsageError(f"theta must lie in (0, 1), got {self.theta}")
        if bench and (self.reps < 1 or not self.sizes or min(self.sizes) < 2):
            raise UsageError("bench needs reps >= 1 and every size >= 2")

    def mvsk_spec(self) -> MvskSpec:
        return MvskSpec(self.lambdas) if self.lambdas is not None else crra_lambdas(self.xi)

    def options(self) -> SolveOptions:
        return SolveOptions(max_iter=self.max_iter, tol=self.tol, sub_tol=self.sub_tol,
                            stat_tol=self.stat_tol, schedule=StepSchedule(), tau_w=self.tau_w)


def _parse_list(text, cast):
    if isinstance(text, (list, tuple)):
        return tuple(cast(x) for x in text)
    return tuple(cast(x) for x in str(text).replace(",", " ").split())


def _optional(cast):
    def conv(text):
        return None if str(text).strip().lower() in ("", "none") else cast(text)
    return conv


_CASTS = {
    "input": str, "n_assets": int, "n_obs": _optional(int), "seed": int, "skew": float,
    "kind": str, "method": str, "xi": float, "lambdas": _optional(lambda s: _parse_list(s, float)),
    "leverage": float, "c": float, "theta": float, "tau_w": _optional(float),
    "tau_delta": float, "tol": float, "sub_tol": float, "stat_tol": float,
    "max_iter": _optional(int), "max_assets": int, "report": str, "trace": str,
    "sizes": lambda s: _parse_list(s, int), "methods": lambda s: _parse_list(s, str),
    "reps": int, "out": str,
}


def load_config(path) -> dict:
    """Read a flat ``[mvskopt]`` INI file. A ``version`` key is required; unknown keys fail."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    extra = [s for s in parser.sections() if s != CONFIG_SECTION]
    if extra or not parser.has_section(CONFIG_SECTION):
        raise UsageError(f"config {path}: expected a single [{CONFIG_SECTION}] section")
    items = dict(parser.items(CONFIG_SECTION))
    version = items.pop("version", None)
    if version is None:
        raise UsageError(f"config {path}: missing 'version' key")
    if version.strip() != str(CONFIG_VERSION):
        raise UsageError(f"config {path}: unsupported version {version!r}, expected {CONFIG_VERSION}")
    out = {}
    for key, raw in items.items():
        if key not in _CASTS:
            raise UsageError(f"config {path}: unknown key {key!r}")
        try:
            out[key] = _CASTS[key](raw)
        except ValueError as exc:
            raise UsageError(f"config {path}: bad value for {key}: {exc}") from None
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def _load_problem(cfg: RunConfig):
    """Moments from a binary file, a returns CSV, or the synthetic generator."""
    if cfg.input:
        path = Path(cfg.input)
        if path.suffix.lower() == ".csv":
            return estimate_moments(read_returns_csv(path), cfg.max_assets)
        return load_moments(path)
    spec = SyntheticSpec(cfg.n_assets, cfg.n_obs, cfg.seed, cfg.skew)
    return estimate_moments(generate_returns(spec), cfg.max_assets)


def run_solver(cfg: RunConfig, m, method: str | None = None):
    method = method or cfg.method
    fs = FeasibleSet(cfg.leverage)
    if cfg.kind == "mvsk":
        return SOLVERS[method](m, cfg.mvsk_spec(), fs, cfg.options())
    tilt = default_tilting(m, cfg.c, theta=cfg.theta, tau_w=1e-5 if cfg.tau_w is None else cfg.tau_w,
                           tau_delta=cfg.tau_delta)
    return SOLVERS[method](m, tilt, fs, cfg.options())


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.n_assets, args.n_obs, args.seed, args.skew, args.tail_df)
    r = generate_returns(spec)
    write_returns_csv(args.out, r)
    print(f"wrote {r.n_obs} x {r.n_assets} returns to {args.out}")
    return EXIT_OK


def cmd_moments(args) -> int:
    r = read_returns_csv(args.csv)
    m = estimate_moments(r, args.max_assets)
    save_moments(args.out, m)
    fp = moments_footprint(m.n_assets)
    print(f"N={m.n_assets} T={r.n_obs} footprint={fp} bytes ({fp / 2 ** 20:.3f} MiB)")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = build_config(args)
    cfg.validate()
    m = _load_problem(cfg)
    rep = run_solver(cfg, m)
    if cfg.report:
        rep.write_json(cfg.report)
    if cfg.trace:
        rep.write_trace_csv(cfg.trace)
    label = "delta" if cfg.kind == "tilting" else "objective"
    print(f"{cfg.method}: {rep.termination} after {rep.iterations} iterations, "
          f"{label}={rep.objective:.10g}, max_violation={rep.max_violation:.2e}, "
          f"stationarity={rep.stationarity:.2e}")
    return EXIT_OK if rep.converged else EXIT_MAX_ITER


BENCH_COLUMNS = ("n_assets", "method", "status", "reps", "converged", "max_iter", "failed",
                 "median_wall_ms", "median_iterations", "median_objective", "median_moments_ms")


def _median(xs):
    return statistics.median(xs) if xs else float("nan")


def bench_rows(cfg: RunConfig) -> list:
    """One row per (N, method); seeds ``seed + r`` are shared by every method."""
    cells = {}
    moment_ms = {}
    for n in sorted(set(cfg.sizes)):
        moment_ms[n] = []
        for r in range(cfg.reps):
            spec = SyntheticSpec(n, cfg.n_obs, cfg.seed + r, cfg.skew)
            data = generate_returns(spec)
            t0 = time.perf_counter()
            m = estimate_moments(data, cfg.max_assets)
            moment_ms[n].append((time.perf_counter() - t0) * 1e3)
            for meth in cfg.methods:
                cell = cells.setdefault((n, meth), {"ok": [], "max_iter": 0, "failed": 0})
                t0 = time.perf_counter()
                try:
                    rep = run_solver(cfg, m, meth)
                except (SubsolverError, ValueError) as exc:
                    print(f"bench: N={n} {meth} seed={cfg.seed + r} failed: {exc}", file=sys.stderr)
                    cell["failed"] += 1
                    continue
                wall = (time.perf_counter() - t0) * 1e3
                if not rep.converged:
                    cell["max_iter"] += 1
                cell["ok"].append((wall, rep.iterations, rep.objective))
    rows = []
    for (n, meth) in sorted(cells, key=lambda k: (k[0], cfg.methods.index(k[1]))):
        cell = cells[(n, meth)]
        runs = cell["ok"]
        n_conv = len(runs) - cell["max_iter"]
        if cell["failed"] == cfg.reps:
            status = "failed"
        elif n_conv == cfg.reps:
            status = "ok"
        else:
            status = "partial"
        rows.append({
            "n_assets": n, "method": meth, "status": status, "reps": cfg.reps,
            "converged": n_conv, "max_iter": cell["max_iter"], "failed": cell["failed"],
            "median_wall_ms": _median([x[0] for x in runs]),
            "median_iterations": _median([x[1] for x in runs]),
            "median_objective": _median([x[2] for x in runs]),
            "median_moments_ms": _median(moment_ms[n]),
        })
    return rows


def _write_bench(fh, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v
                    for v in (row[c] for c in BENCH_COLUMNS)])


def write_bench_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_bench(fh, rows)


def cmd_bench(args) -> int:
    cfg = build_config(args)
    if args.kind is None and "kind" not in (load_config(args.config) if args.config else {}):
        cfg.kind = "tilting" if set(cfg.methods) <= set(METHODS["tilting"]) else "mvsk"
    cfg.validate(bench=True)
    rows = bench_rows(cfg)
    if cfg.out:
        write_bench_csv(cfg.out, rows)
    else:
        _write_bench(sys.stdout, rows)
    return EXIT_OK


def _add_solver_flags(p):
    p.add_argument("--config", help="INI file with a [mvskopt] section; flags override it")
    p.add_argument("--input", help="returns CSV or binary moments file (default: synthetic data)")
    p.add_argument("--n-assets", type=int, help="synthetic N when no input is given")
    p.add_argument("--n-obs", type=int, help="synthetic T (default 5N)")
    p.add_argument("--seed", type=int)
    p.add_argument("--skew", type=float, help="shock skewness of the synthetic data")
    p.add_argument("--kind", choices=sorted(METHODS))
    p.add_argument("--xi", type=float, help="CRRA risk aversion giving the moment weights")
    p.add_argument("--lambdas", type=lambda s: _parse_list(s, float),
                   help="explicit moment weights l1,l2,l3,l4 (overrides --xi)")
    p.add_argument("--leverage", type=float, help="L in ||w||_1 <= L")
    p.add_argument("--c", type=float, help="tracking-error multiplier, kappa = c*sqrt(var(w0))")
    p.add_argument("--theta", type=float)
    p.add_argument("--tau-w", type=float)
    p.add_argument("--tau-delta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--sub-tol", type=float)
    p.add_argument("--stat-tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--max-assets", type=int)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvskopt", description="Four-moment portfolio optimization.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write synthetic returns to CSV")
    g.add_argument("--n-assets", type=int, required=True)
    g.add_argument("--n-obs", type=int, default=None, help="default 5N")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--skew", type=float, default=1.0)
    g.add_argument("--tail-df", type=float, default=6.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    mo = sub.add_parser("moments", help="estimate the four sample moments of a returns CSV")
    mo.add_argument("csv")
    mo.add_argument("--out", required=True)
    mo.add_argument("--max-assets", type=int, default=DEFAULT_MAX_ASSETS)
    mo.set_defaults(func=cmd_moments)

    s = sub.add_parser("solve", help="run one solver and write its report and trace")
    _add_solver_flags(s)
    s.add_argument("--method", choices=sorted(SOLVERS))
    s.add_argument("--report", help="JSON report path")
    s.add_argument("--trace", help="per-iteration CSV path")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="compare methods over seeded synthetic instances")
    _add_solver_flags(b)
    b.add_argument("--sizes", type=lambda s: _parse_list(s, int), help="comma-separated N values")
    b.add_argument("--methods", type=lambda s: _parse_list(s, str))
    b.add_argument("--reps", type=int)
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DataError, DimensionError, SubsolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
