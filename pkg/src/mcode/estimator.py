"""Monte Carlo aggregation, clipping, patching and validity diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .codes import SINGLE_TREE, Code, CodeCache, MechanismTable, initial_bound_K
from .densities import LifetimeDensity, density_at, tail_at
from .expr import RhsSystem
from .kernels import ST_DEPTH, ST_OK, ST_SINGULAR, Batch, JetCache, draw
from .sampling import SampleOptions


class NoUsableSamples(RuntimeError):
    pass


@dataclass
class Estimate:
    mean: float
    variance: float
    std_error: float
    n_used: int
    n_aborted: int = 0
    n_clipped: int = 0
    n_aborted_depth: int = 0
    n_aborted_singular: int = 0

    @property
    def n_total(self) -> int:
        return self.n_used + self.n_aborted + self.n_clipped

    @classmethod
    def exact(cls, value: float, n: int = 0) -> "Estimate":
        return cls(float(value), 0.0, 0.0, n)


class RunningStats:
    """Streaming count/mean/M2 with pairwise (Chan et al.) merging."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, values) -> "RunningStats":
        v = np.asarray(values, dtype=float)
        if v.size:
            other = RunningStats()
            other.n = v.size
            other.mean = float(v.mean())
            other.m2 = float(np.sum((v - other.mean) ** 2))
            self.merge(other)
        return self

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n else float("nan")


@dataclass(frozen=True)
class ClipPolicy:
    """Discard samples outside the (p, 100 - p) percentile range widened by
    ``multiplier`` times its width on each side.  ``percentile`` is in percent."""

    enabled: bool = False
    percentile: float = 0.1
    multiplier: float = 100.0

    def __post_init__(self):
        if not 0 < self.percentile < 50:
            raise ValueError("clip percentile must lie in (0, 50)")
        if not self.multiplier > 0:
            raise ValueError("clip multiplier must be positive")

    @classmethod
    def on(cls, percentile: float = 0.1, multiplier: float = 100.0) -> "ClipPolicy":
        return cls(True, float(percentile), float(multiplier))

    @classmethod
    def parse(cls, text: str) -> "ClipPolicy":
        """``"p,m"``, or ``off``."""
        if text.strip().lower() in ("off", "none", "no", ""):
            return cls()
        p, m = text.split(",")
        return cls.on(float(p), float(m))

    def bounds(self, values: np.ndarray) -> tuple[float, float]:
        lo, hi = np.percentile(values, [self.percentile, 100.0 - self.percentile])
        w = hi - lo
        # round-off spread between equal samples is never clipped
        tol = 64.0 * np.finfo(float).eps * max(abs(lo), abs(hi))
        return lo - self.multiplier * w - tol, hi + self.multiplier * w + tol

    def __str__(self):
        return f"{self.percentile:g},{self.multiplier:g}" if self.enabled else "off"


def draw_samples(
    sys: RhsSystem,
    table: MechanismTable,
    i: int,
    t: float,
    N: int,
    opts: SampleOptions | None = None,
    seed: int = 0,
    stream: tuple = (),
    root: Code | None = None,
    backend: str | None = None,
    jets: JetCache | None = None,
    cache: CodeCache | None = None,
) -> Batch:
    """All N samples of the tree rooted at ``root`` (default Id_i) at horizon t.

    The stream key is derived from (seed, *stream, i); sample k of the stream
    is the same tree whichever backend or chunking produced it.
    """
    opts = opts or SampleOptions()
    root = root if root is not None else table.root(i)
    base = _rng.stream_key(seed, *stream, i)
    return draw(sys, table, root, t, np.arange(N), opts, base, jets=jets, cache=cache, backend=backend)


def summarize(values: np.ndarray, status: np.ndarray, clip: ClipPolicy | None = None, chunks: int = 1) -> Estimate:
    """Reduce one sample stream; ``chunks`` contiguous pieces merged in order."""
    clip = clip or ClipPolicy()
    N = values.size
    ok = status == ST_OK
    n_aborted = int(N - ok.sum())
    keep = ok.copy()
    if clip.enabled and ok.any():
        lo, hi = clip.bounds(values[ok])
        keep &= (values >= lo) & (values <= hi)
    n_clipped = int(ok.sum() - keep.sum())
    if not keep.any():
        raise NoUsableSamples(f"no usable samples ({n_aborted} aborted, {n_clipped} clipped of {N})")
    stats = RunningStats()
    for part in np.array_split(np.arange(N), max(1, int(chunks))):
        stats.merge(RunningStats().push(values[part][keep[part]]))
    return Estimate(
        stats.mean,
        stats.variance,
        math.sqrt(stats.variance / stats.n),
        stats.n,
        n_aborted,
        n_clipped,
        int((status == ST_DEPTH).sum()),
        int((status == ST_SINGULAR).sum()),
    )


def estimate_at(
    sys: RhsSystem,
    table: MechanismTable,
    i: int,
    t: float,
    N: int,
    opts: SampleOptions | None = None,
    clip: ClipPolicy | None = None,
    seed: int = 0,
    chunks: int = 1,
    stream: tuple = (),
    root: Code | None = None,
    backend: str | None = None,
    jets: JetCache | None = None,
    cache: CodeCache | None = None,
) -> Estimate:
    """Monte Carlo estimate of y_i(t0 + t)."""
    if N < 2:
        raise ValueError("N must be >= 2")
    b = draw_samples(sys, table, i, t, N, opts, seed, stream, root, backend, jets, cache)
    return summarize(b.values, b.status, clip, chunks)


@dataclass
class Trajectory:
    times: np.ndarray
    estimates: list[list[Estimate]]  # [time][component]
    acc_std_errors: np.ndarray  # (n_times, d)
    patch_boundaries: list[float]
    patch_index: np.ndarray  # patch each row belongs to (-1 for the initial row)
    complete: bool = True
    error: str = ""

    @property
    def means(self) -> np.ndarray:
        return np.array([[e.mean for e in row] for row in self.estimates])

    @property
    def std_errors(self) -> np.ndarray:
        return np.array([[e.std_error for e in row] for row in self.estimates])

    @property
    def variances(self) -> np.ndarray:
        return np.array([[e.variance for e in row] for row in self.estimates])

    @property
    def n_aborted(self) -> int:
        return sum(e.n_aborted for row in self.estimates for e in row)

    @property
    def n_clipped(self) -> int:
        return sum(e.n_clipped for row in self.estimates for e in row)


def patch_solve(
    sys: RhsSystem,
    table: MechanismTable,
    window: tuple[float, float],
    n_patches: int = 1,
    grid_per_patch: int = 10,
    N: int = 10_000,
    opts: SampleOptions | None = None,
    clip: ClipPolicy | None = None,
    seed: int = 0,
    chunks: int = 1,
    backend: str | None = None,
    include_start: bool = True,
) -> Trajectory:
    """Estimate every component on an equally spaced grid over ``window``.

    The window is cut into ``n_patches`` equal patches, each with
    ``grid_per_patch`` points closed on the right; the estimate at a patch
    end is the initial condition of the next.  A time component
    (``sys.time_axis``) is reported exactly.  The accumulated standard
    error adds the largest endpoint standard error of every earlier patch
    to the local one.
    """
    if n_patches < 1:
        raise ValueError("n_patches must be >= 1")
    if grid_per_patch < 1:
        raise ValueError("grid_per_patch must be >= 1")
    t_lo, t_hi = map(float, window)
    if not t_hi > t_lo:
        raise ValueError("empty window")
    opts = opts or SampleOptions()
    d = sys.dimension
    ta = sys.time_axis
    L = (t_hi - t_lo) / n_patches
    times, rows, acc, pidx = [], [], [], []
    if include_start:
        times.append(t_lo)
        start = sys.y0.copy()
        if ta is not None:
            start[ta] = t_lo
        rows.append([Estimate.exact(v) for v in start])
        acc.append(np.zeros(d))
        pidx.append(-1)
    boundaries = [t_lo + p * L for p in range(n_patches + 1)]
    state = np.array(sys.y0, dtype=float)
    if ta is not None:
        state[ta] = t_lo
    carry = 0.0
    cache = CodeCache(opts.max_order)
    estimable = _estimable_components(sys, table)
    complete, err = True, ""
    for p in range(n_patches):
        t0 = boundaries[p]
        local = sys.with_initial(state, t0)
        jets = JetCache(local, max_order=opts.max_order)
        cache.reset()
        try:
            for k in range(1, grid_per_patch + 1):
                h = L * k / grid_per_patch
                row = []
                for i in range(d):
                    if i == ta:
                        row.append(Estimate.exact(t0 + h))
                    elif i in estimable:
                        row.append(estimate_at(local, table, i, h, N, opts, clip, seed, chunks,
                                               (p, k), None, backend, jets, cache))
                    else:
                        row.append(Estimate(float("nan"), float("nan"), float("nan"), 0))
                times.append(t0 + h)
                rows.append(row)
                acc.append(np.array([e.std_error for e in row]) + carry)
                pidx.append(p)
        except NoUsableSamples as exc:
            complete, err = False, f"patch {p}: {exc}"
            break
        end = rows[-1]
        state = np.array([e.mean for e in end])
        if not np.all(np.isfinite(state)):
            complete, err = False, f"patch {p}: non-finite endpoint"
            break
        carry += max(e.std_error for e in end if np.isfinite(e.std_error))
    return Trajectory(np.array(times), rows, np.array(acc), boundaries, np.array(pidx), complete, err)


def _estimable_components(sys: RhsSystem, table: MechanismTable) -> set[int]:
    if table.mode == SINGLE_TREE:
        return {table.state}
    return set(range(sys.dimension))


@dataclass
class ValidityReport:
    K: float
    horizon_autonomous: float
    horizon_single_tree: float
    prop1_ok: bool
    T: float
    dimension: int
    probe_depth: int
    rho_T: float
    tail_T: float
    density: str = ""
    notes: list[str] = field(default_factory=list)

    def horizon(self, mode: str) -> float:
        return self.horizon_single_tree if mode == SINGLE_TREE else self.horizon_autonomous

    def warning(self, t_end: float, mode: str) -> str | None:
        h = self.horizon(mode)
        if t_end >= h:
            return (f"WARNING: window end {t_end:g} lies at or beyond the certified horizon {h:.6g} "
                    f"({mode}); the estimator may not be integrable there")
        return None

    def lines(self) -> list[str]:
        return [
            f"K = {self.K:.17g} (probe depth {self.probe_depth}; heuristic, not a certified bound)",
            f"horizon_autonomous = 1/(K d) = {self.horizon_autonomous:.17g} (d = {self.dimension})",
            f"horizon_single_tree = ln(1 + 1/K) = {self.horizon_single_tree:.17g}",
            f"density {self.density} at T = {self.T:g}: rho(T) = {self.rho_T:.6g}, tail(T) = {self.tail_T:.6g}, "
            f"rho(T) >= d and K <= tail(T): {'yes' if self.prop1_ok else 'no'}",
            *self.notes,
        ]


def validity_report(
    sys: RhsSystem,
    table: MechanismTable,
    density: LifetimeDensity | None = None,
    T: float = 1.0,
    probe_depth: int = 6,
) -> ValidityReport:
    if not T > 0:
        raise ValueError("T must be positive")
    density = density or LifetimeDensity()
    K = initial_bound_K(sys, table, probe_depth)
    d = sys.dimension
    h_aut = 1.0 / (K * d) if K > 0 else math.inf
    h_st = math.log1p(1.0 / K) if K > 0 else math.inf
    rho = float(density_at(density, T))
    tail = float(tail_at(density, T))
    return ValidityReport(K, h_aut, h_st, bool(rho >= d and K <= tail), float(T), d, probe_depth, rho, tail, str(density))


def mean_tree_size(t: float, lam: float = 1.0) -> tuple[float, float]:
    """Expected leaf counts of exponential coding trees: identity-rooted and
    derivative-rooted (cosh(lam t), exp(lam t))."""
    if not lam > 0:
        raise ValueError("rate must be positive")
    return math.cosh(lam * t), math.exp(lam * t)
