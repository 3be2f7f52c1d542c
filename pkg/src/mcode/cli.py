"""Command line runner: presets, configs, reports.

    mcode run <preset|config> [--n N] [--seed S] [--patches K] [--clip p,m]
              [--threads T] [--out DIR] ...
    mcode list
    mcode validity <preset>
    mcode butcher-check <preset> --max-order K

Reports go to ``--out`` or ``$MCODE_OUT_DIR`` (default ``./mcode-out``).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .butcher import (
    MAX_ENUM_ORDER,
    butcher_partial_sum,
    coefficients,
    elementary_differential,
    enumerate_butcher_trees,
    shape_conditioned_estimate,
)
from .codes import AUTONOMOUS, CUSTOM, SINGLE_TREE, CodeCache, MechanismTable, autonomize
from .densities import LifetimeDensity
from .estimator import ClipPolicy, Trajectory, draw_samples, patch_solve, validity_report
from .expr import RhsSystem, SingularEvaluation, parse
from .problems import PROBLEMS, Problem, builtin_problem
from .sampling import SampleOptions

OUT_ENV = "MCODE_OUT_DIR"
DEFAULT_OUT = "mcode-out"
FIGURE_CLIP = ClipPolicy.on(0.1, 100.0)

EXIT_GATE = 3
EXIT_PARTIAL = 4


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.17g}"


@dataclass
class ProblemSpec:
    problem: Problem
    N: int
    patches: int
    grid_per_patch: int
    window: tuple[float, float]
    clip: ClipPolicy = field(default_factory=ClipPolicy)
    seed: int = 0
    chunks: int = 1
    max_depth: int = 10_000
    force: bool = False
    backend: str | None = None

    @property
    def name(self) -> str:
        return self.problem.name

    @classmethod
    def from_problem(cls, pr: Problem, **over) -> "ProblemSpec":
        spec = cls(pr, pr.N, pr.patches, pr.grid_per_patch, pr.window, ClipPolicy.parse(pr.clip))
        return replace(spec, **{k: v for k, v in over.items() if v is not None})


# ----------------------------------------------------------------------------
# config files

_LIST_KEYS = ("components", "y0", "window")


def read_config(path: str | Path) -> dict:
    """JSON object, or ``key = value`` lines (``#`` comments).  In the
    key=value form, ``components`` are separated by ``;`` and ``y0`` and
    ``window`` by commas."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected key = value, got {raw!r}")
        key, val = key.strip(), val.strip()
        if key == "components":
            out[key] = [c.strip() for c in val.split(";") if c.strip()]
        elif key in _LIST_KEYS:
            out[key] = [float(v) for v in val.split(",")]
        else:
            out[key] = val
    return out


def spec_from_config(cfg: dict) -> ProblemSpec:
    """Build a run spec from a config mapping.

    Either ``preset`` names a builtin problem (other keys override it) or
    ``components``/``y0`` define a system inline.  With ``nonautonomous =
    true`` the single component is f(t, y) over (y0 = t, y1 = y).
    """
    cfg = dict(cfg)
    if "preset" in cfg:
        pr = builtin_problem(str(cfg.pop("preset")))
    else:
        comps = cfg.pop("components")
        if isinstance(comps, str):
            comps = [c for c in comps.split(";") if c.strip()]
        y0 = [float(v) for v in np.atleast_1d(cfg.pop("y0"))]
        t0 = float(cfg.pop("t0", 0.0))
        name = str(cfg.pop("name", "custom"))
        if _truthy(cfg.pop("nonautonomous", False)):
            if len(comps) != 1 or len(y0) != 1:
                raise ValueError("nonautonomous configs take one component f(t, y) and one initial value")
            system = autonomize(parse(comps[0], 2), y0[0], t0, name=name)
        else:
            system = RhsSystem([parse(c, len(comps)) for c in comps], y0, t0, name=name)
        window = tuple(float(v) for v in cfg.pop("window", (t0, t0 + 0.5)))
        pr = Problem(name, system, AUTONOMOUS, LifetimeDensity(), window, 10, 1, 100_000, None, None, "inline system")
    if "name" in cfg:
        pr = replace(pr, name=str(cfg.pop("name")))
    if "mode" in cfg:
        pr = pr.with_mode(str(cfg.pop("mode")))
    if "density" in cfg:
        pr = replace(pr, density=LifetimeDensity.parse(str(cfg.pop("density"))))
    over = {}
    if "window" in cfg:
        over["window"] = tuple(float(v) for v in cfg.pop("window"))
    for key, attr, conv in (("N", "N", int), ("n", "N", int), ("patches", "patches", int),
                            ("grid", "grid_per_patch", int), ("seed", "seed", int), ("chunks", "chunks", int),
                            ("max_depth", "max_depth", int)):
        if key in cfg:
            over[attr] = conv(float(cfg.pop(key)))
    if "clip" in cfg:
        over["clip"] = ClipPolicy.parse(str(cfg.pop("clip")))
    if "force" in cfg:
        over["force"] = _truthy(cfg.pop("force"))
    if cfg:
        raise ValueError(f"unknown config keys: {', '.join(sorted(cfg))}")
    return ProblemSpec.from_problem(pr, **over)


def _truthy(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return bool(v)


# ----------------------------------------------------------------------------
# reports


@dataclass
class Report:
    spec: ProblemSpec
    trajectory: Trajectory
    exact: np.ndarray | None  # (n_times, d) or None
    gate_k: float | None
    violations: list[str]
    warnings: list[str]
    validity_lines: list[str]
    wall_time: float

    def header(self) -> list[str]:
        cols = ["t"]
        for i in range(self.trajectory.means.shape[1]):
            cols += [f"mean_{i}", f"variance_{i}", f"std_error_{i}", f"acc_std_error_{i}", f"exact_{i}", f"abs_error_{i}"]
        return cols

    def rows(self) -> list[list[str]]:
        tr = self.trajectory
        m, v, s, a = tr.means, tr.variances, tr.std_errors, tr.acc_std_errors
        out = []
        for k, t in enumerate(tr.times):
            row = [fmt(t)]
            for i in range(m.shape[1]):
                ex = None if self.exact is None else self.exact[k, i]
                err = None if ex is None else abs(m[k, i] - ex)
                row += [fmt(m[k, i]), fmt(v[k, i]), fmt(s[k, i]), fmt(a[k, i]), fmt(ex), fmt(err)]
            out.append(row)
        return out

    def csv(self) -> str:
        lines = [",".join(self.header())] + [",".join(r) for r in self.rows()]
        return "\n".join(lines) + "\n"

    def dat(self) -> str:
        tr = self.trajectory
        d = tr.means.shape[1]
        cols = ["t"] + [f"{p}_{i}" for i in range(d) for p in ("mean", "lo", "hi", "exact")]
        lines = [f"# {self.spec.name}: mean, mean -/+ acc_std_error, exact", "# " + " ".join(cols)]
        for k, t in enumerate(tr.times):
            vals = [fmt(t)]
            for i in range(d):
                mu, se = tr.means[k, i], tr.acc_std_errors[k, i]
                ex = np.nan if self.exact is None else self.exact[k, i]
                vals += [fmt(mu) or "nan", fmt(mu - se) or "nan", fmt(mu + se) or "nan", fmt(ex) or "nan"]
            lines.append(" ".join(vals))
        return "\n".join(lines) + "\n"

    def metadata(self) -> dict:
        sp, tr = self.spec, self.trajectory
        return {
            "name": sp.name,
            "system": repr(sp.problem.system),
            "mode": sp.problem.mode,
            "density": str(sp.problem.density),
            "window": list(sp.window),
            "patches": sp.patches,
            "grid_per_patch": sp.grid_per_patch,
            "N": sp.N,
            "seed": sp.seed,
            "chunks": sp.chunks,
            "clip": str(sp.clip),
            "backend": sp.backend or kernels.default_backend(),
            "n_aborted": tr.n_aborted,
            "n_clipped": tr.n_clipped,
            "complete": tr.complete,
            "error": tr.error,
            "gate_k": self.gate_k,
            "violations": self.violations,
            "warnings": self.warnings,
            "validity": self.validity_lines,
            "wall_time_s": self.wall_time,
        }

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{self.spec.name}.csv", "dat": out / f"{self.spec.name}.dat",
                 "json": out / f"{self.spec.name}.json"}
        paths["csv"].write_text(self.csv())
        paths["dat"].write_text(self.dat())
        paths["json"].write_text(json.dumps(self.metadata(), indent=2) + "\n")
        return paths


def gate_multiplier(spec: ProblemSpec) -> float:
    """Allowed |error| in units of accumulated standard error."""
    return 4.0 if spec.patches == 1 and spec.problem.mode != SINGLE_TREE else 5.0


class WindowError(ValueError):
    pass


def run_experiment(spec: ProblemSpec, log=print) -> Report:
    pr = spec.problem
    lo, hi = spec.window
    if pr.validity_end is not None and hi > pr.validity_end + 1e-12 and not spec.force:
        raise WindowError(f"window end {hi:g} exceeds the declared validity end {pr.validity_end:g} "
                          f"of {pr.name}; pass --force to run anyway")
    table = pr.mechanism()
    L = (hi - lo) / spec.patches
    warnings = []
    try:
        rep = validity_report(pr.system, table, pr.density, L)
        vlines = rep.lines()
    except SingularEvaluation as exc:
        rep = None
        vlines = [f"K undefined: {exc}"]
        warnings.append("WARNING: no certified horizon; the right-hand side is singular at the initial point")
    for line in vlines:
        log(line)
    if rep is not None and pr.mode != CUSTOM:
        w = rep.warning(L, pr.mode)
        if w:
            warnings.append(w + (" (first patch)" if spec.patches > 1 else ""))
    if pr.validity_end is not None and hi > pr.validity_end + 1e-12:
        warnings.append(f"WARNING: window end {hi:g} is past the declared validity end {pr.validity_end:g}")
    for w in warnings:
        print(w, file=sys.stderr)

    opts = SampleOptions(max_depth=spec.max_depth, density=pr.density)
    t0 = time.perf_counter()
    tr = patch_solve(pr.system, table, spec.window, spec.patches, spec.grid_per_patch, spec.N, opts,
                     spec.clip, spec.seed, spec.chunks, spec.backend)
    wall = time.perf_counter() - t0
    exact = None
    if pr.exact is not None:
        exact = np.array([pr.exact_at(t) for t in tr.times])
    k = gate_multiplier(spec)
    violations = []
    if exact is not None:
        m, acc = tr.means, tr.acc_std_errors
        for r, t in enumerate(tr.times):
            for i in range(m.shape[1]):
                if not np.isfinite(m[r, i]):
                    continue
                err = abs(m[r, i] - exact[r, i])
                tol = max(k * acc[r, i], 1e-12 * max(1.0, abs(exact[r, i])))
                if not err <= tol:
                    violations.append(f"t={t:.6g} component {i}: |error| {err:.3g} > {k:g} x acc_std_error {acc[r, i]:.3g}")
    if tr.n_aborted:
        warnings.append(f"WARNING: {tr.n_aborted} samples aborted (excluded from the means)")
        print(warnings[-1], file=sys.stderr)
    return Report(spec, tr, exact, k if exact is not None else None, violations, warnings, vlines, wall)


# ----------------------------------------------------------------------------
# commands


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _load_spec(target: str) -> ProblemSpec:
    if target in PROBLEMS:
        return ProblemSpec.from_problem(builtin_problem(target))
    if Path(target).exists():
        return spec_from_config(read_config(target))
    raise SystemExit(f"unknown preset or config file: {target!r} (presets: {', '.join(PROBLEMS)})")


def cmd_run(args) -> int:
    spec = _load_spec(args.target)
    over = {}
    if args.n is not None:
        over["N"] = args.n
    if args.seed is not None:
        over["seed"] = args.seed
    if args.patches is not None:
        over["patches"] = args.patches
    if args.grid is not None:
        over["grid_per_patch"] = args.grid
    if args.window is not None:
        over["window"] = tuple(float(v) for v in args.window.split(","))
    if args.chunks is not None:
        over["chunks"] = args.chunks
    if args.figure:
        over["clip"] = FIGURE_CLIP
    if args.clip is not None:
        over["clip"] = ClipPolicy.parse(args.clip)
    pr = spec.problem
    if args.mode:
        pr = pr.with_mode(args.mode)
    if args.density:
        pr = replace(pr, density=LifetimeDensity.parse(args.density))
    spec = replace(spec, problem=pr, force=spec.force or args.force, backend=args.backend, **over)
    if args.threads:
        kernels.set_threads(args.threads)
    try:
        rep = run_experiment(spec)
    except WindowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = rep.write(_out_dir(args.out))
    tr = rep.trajectory
    print(f"{spec.name}: {len(tr.times)} grid points, N = {spec.N}, seed = {spec.seed}, "
          f"aborted = {tr.n_aborted}, clipped = {tr.n_clipped}, {rep.wall_time:.2f} s")
    for key, p in paths.items():
        print(f"wrote {p}")
    if not tr.complete:
        print(f"error: trajectory incomplete: {tr.error}", file=sys.stderr)
        return EXIT_PARTIAL
    if rep.violations:
        for v in rep.violations:
            print(f"GATE FAILED: {v}", file=sys.stderr)
        return EXIT_GATE
    if rep.gate_k is not None:
        print(f"gate passed: |error| <= {rep.gate_k:g} x acc_std_error at every grid point")
    return 0


def cmd_list(args) -> int:
    for name in PROBLEMS:
        pr = builtin_problem(name)
        lo, hi = pr.window
        print(f"{name:12s} {pr.mode:12s} {str(pr.density):14s} [{lo:g}, {hi:g}] patches={pr.patches} "
              f"grid={pr.grid_per_patch} N={pr.N}  {pr.description}")
    return 0


def cmd_validity(args) -> int:
    spec = _load_spec(args.target)
    pr = spec.problem
    if args.mode:
        pr = pr.with_mode(args.mode)
    lo, hi = spec.window
    T = args.T if args.T is not None else (hi - lo) / spec.patches
    rep = validity_report(pr.system, pr.mechanism(), pr.density, T, args.probe_depth)
    for line in rep.lines():
        print(line)
    if pr.mode != CUSTOM:
        w = rep.warning(T, pr.mode)
        if w:
            print(w)
    return 0


def cmd_butcher_check(args) -> int:
    spec = _load_spec(args.target)
    sys_ = spec.problem.system
    if not 1 <= args.max_order <= MAX_ENUM_ORDER:
        print(f"error: --max-order must lie in 1..{MAX_ENUM_ORDER}", file=sys.stderr)
        return 2
    lo, hi = spec.window
    t = args.t if args.t is not None else min(0.2, 0.5 * (hi - lo))
    table = MechanismTable.autonomous(sys_.dimension)
    comp = args.component
    trees = enumerate_butcher_trees(args.max_order)
    cache = CodeCache()
    opts = SampleOptions(record_shape=True, density=LifetimeDensity.exponential(1.0))
    batch = draw_samples(sys_, table, comp, t, args.n, opts, args.seed) if args.n else None
    print(f"# {spec.name}: component {comp}, t = {t:g}, autonomous mechanism, exponential(1) lifetimes")
    print("# order tree sigma gamma nu term=t^n c/nu" + ("  mc_estimate std_error z" if batch is not None else ""))
    bad = 0
    for n, group in trees.items():
        total = 0.0
        for b in group:
            co = coefficients(b)
            c = elementary_differential(b, sys_, cache)[comp]
            term = t**n * c / co.nu
            total += c / co.nu
            line = f"{n} {b} {co.sigma} {co.gamma} {co.nu} {fmt(term)}"
            if batch is not None and 2 * n <= 39:
                est = shape_conditioned_estimate(sys_, table, comp, t, args.n, opts, b, batch=batch).estimate
                z = (est.mean - term) / est.std_error if est.std_error > 0 else (0.0 if est.mean == term else math.inf)
                line += f" {fmt(est.mean)} {fmt(est.std_error)} {z:.3f}"
                if abs(z) > args.k:
                    bad += 1
                    line += "  <-- outside gate"
            print(line)
        print(f"# order {n}: sum of c/nu = {fmt(total)}")
    ps = butcher_partial_sum(sys_, t, args.max_order)[comp]
    print(f"# partial sum to order {args.max_order} at t = {t:g}: {fmt(ps)}")
    ex = spec.problem.exact_at(sys_.t0 + t) if spec.problem.exact is not None else None
    if ex is not None:
        print(f"# exact value: {fmt(ex[comp])}")
    if bad:
        print(f"{bad} shape-conditioned estimates outside {args.k:g} standard errors", file=sys.stderr)
        return EXIT_GATE
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcode", description="Monte Carlo ODE solver on random coding trees")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a preset or config file and write CSV/plot data")
    r.add_argument("target", help="preset name or config path")
    r.add_argument("--n", type=int, help="samples per grid point and component")
    r.add_argument("--seed", type=int)
    r.add_argument("--patches", type=int)
    r.add_argument("--grid", type=int, help="grid points per patch")
    r.add_argument("--window", help="lo,hi")
    r.add_argument("--clip", help="p,m (percentile in percent, width multiplier) or off")
    r.add_argument("--figure", action="store_true", help="figure mode: clip with p=0.1, m=100")
    r.add_argument("--threads", type=int)
    r.add_argument("--chunks", type=int)
    r.add_argument("--mode", choices=[AUTONOMOUS, SINGLE_TREE])
    r.add_argument("--density", help="exponential[:rate] or gamma_half")
    r.add_argument("--backend", choices=["numba", "numpy", "reference"])
    r.add_argument("--force", action="store_true", help="allow windows past the declared validity end")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    r.set_defaults(func=cmd_run)

    ls = sub.add_parser("list", help="list presets")
    ls.set_defaults(func=cmd_list)

    v = sub.add_parser("validity", help="print the validity report of a preset")
    v.add_argument("target")
    v.add_argument("--T", type=float, help="horizon for the density checks (default: patch length)")
    v.add_argument("--probe-depth", type=int, default=6)
    v.add_argument("--mode", choices=[AUTONOMOUS, SINGLE_TREE])
    v.set_defaults(func=cmd_validity)

    b = sub.add_parser("butcher-check", help="compare B-series terms with shape-conditioned estimates")
    b.add_argument("target")
    b.add_argument("--max-order", type=int, required=True)
    b.add_argument("--t", type=float)
    b.add_argument("--n", type=int, default=200_000, help="samples (0 skips the Monte Carlo columns)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--component", type=int, default=0)
    b.add_argument("--k", type=float, default=5.0, help="gate in standard errors")
    b.set_defaults(func=cmd_butcher_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
