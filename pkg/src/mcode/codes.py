"""Codes, mechanisms and system constructors.

A code is either the projection ``Id_i`` or a mixed partial derivative
``D^a f_i`` of a right-hand-side component.  A mechanism maps every code to
the tuples of codes it may branch into, each chosen with probability q.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .expr import (
    MAX_DERIVATIVE_ORDER,
    DerivativeOrderError,
    Expr,
    RhsSystem,
    as_expr,
    const,
    differentiate,
    evaluate,
    var,
)

AUTONOMOUS = "autonomous"
SINGLE_TREE = "single_tree"
CUSTOM = "custom"


@dataclass(frozen=True, order=True)
class Code:
    comp: int
    multi_index: tuple[int, ...] | None = None

    @classmethod
    def identity(cls, i: int) -> "Code":
        return cls(int(i), None)

    @classmethod
    def derivative(cls, i: int, multi_index: Sequence[int]) -> "Code":
        mi = tuple(int(k) for k in multi_index)
        if any(k < 0 for k in mi):
            raise ValueError("multi-index entries must be non-negative")
        return cls(int(i), mi)

    @classmethod
    def f(cls, i: int, d: int) -> "Code":
        return cls(int(i), (0,) * d)

    @property
    def is_identity(self) -> bool:
        return self.multi_index is None

    @property
    def order(self) -> int:
        return 0 if self.multi_index is None else sum(self.multi_index)

    def bump(self, axis: int) -> "Code":
        """Same component, one more derivative along `axis`."""
        mi = list(self.multi_index)
        mi[axis] += 1
        return Code(self.comp, tuple(mi))

    def check(self, d: int) -> None:
        if not 0 <= self.comp < d:
            raise ValueError(f"component {self.comp} out of range for dimension {d}")
        if self.multi_index is not None and len(self.multi_index) != d:
            raise ValueError(f"multi-index {self.multi_index} has wrong length for dimension {d}")

    def __str__(self):
        if self.multi_index is None:
            return f"Id{self.comp}"
        if not any(self.multi_index):
            return f"f{self.comp}"
        return "D" + ",".join(map(str, self.multi_index)) + f"f{self.comp}"


@dataclass(frozen=True)
class Branch:
    codes: tuple[Code, ...]

    def __post_init__(self):
        if len(self.codes) not in (1, 2):
            raise ValueError("a branch holds one or two codes")


class MechanismUndefined(KeyError):
    pass


class MechanismTable:
    """Branch tuples and probabilities for every code.

    Build with :meth:`autonomous`, :meth:`single_tree` or :meth:`custom`.
    """

    def __init__(self, mode: str, dimension: int, entries=None, time_axis: int = 0, state: int = 1):
        if mode not in (AUTONOMOUS, SINGLE_TREE, CUSTOM):
            raise ValueError(f"unknown mechanism mode {mode!r}")
        if mode == SINGLE_TREE and dimension != 2:
            raise ValueError("the single-tree mechanism needs a (time, state) system of dimension 2")
        self.mode = mode
        self.dimension = int(dimension)
        self.time_axis = time_axis
        self.state = state
        self._entries = entries

    @classmethod
    def autonomous(cls, d: int) -> "MechanismTable":
        return cls(AUTONOMOUS, d)

    @classmethod
    def single_tree(cls, time_axis: int = 0) -> "MechanismTable":
        return cls(SINGLE_TREE, 2, time_axis=time_axis, state=1 - time_axis)

    @classmethod
    def custom(cls, d: int, entries: Mapping[Code, Sequence]) -> "MechanismTable":
        """entries maps a code to a list of branches, or of (branch, q) pairs."""
        table = {}
        for code, branches in entries.items():
            pairs = []
            for b in branches:
                if isinstance(b, tuple) and len(b) == 2 and isinstance(b[1], (int, float)):
                    br, q = b
                else:
                    br, q = b, None
                if not isinstance(br, Branch):
                    br = Branch(tuple(br))
                pairs.append([br, q])
            if not pairs:
                raise ValueError(f"code {code} has an empty branch list")
            for p in pairs:
                if p[1] is None:
                    p[1] = 1.0 / len(pairs)
            total = sum(q for _, q in pairs)
            if any(q <= 0 for _, q in pairs) or abs(total - 1.0) > 1e-12:
                raise ValueError(f"branch probabilities for {code} must be positive and sum to 1")
            table[code] = tuple((br, float(q)) for br, q in pairs)
        return cls(CUSTOM, d, table)

    def root(self, i: int) -> Code:
        """Identity code whose tree estimates component i."""
        if self.mode == SINGLE_TREE and i != self.state:
            raise ValueError("the single-tree mechanism only estimates the state component")
        return Code.identity(i)

    def branches(self, c: Code) -> tuple[tuple[Branch, float], ...]:
        d = self.dimension
        if self.mode == CUSTOM:
            try:
                return self._entries[c]
            except KeyError:
                raise MechanismUndefined(f"mechanism undefined for code {c}") from None
        c.check(d)
        if self.mode == AUTONOMOUS:
            if c.is_identity:
                return ((Branch((Code.f(c.comp, d),)), 1.0),)
            q = 1.0 / d
            return tuple((Branch((Code.f(j, d), c.bump(j))), q) for j in range(d))
        # single tree: time derivative alone, or (f, state derivative)
        if c.is_identity:
            return ((Branch((Code.f(self.state, d),)), 1.0),)
        return (
            (Branch((c.bump(self.time_axis),)), 0.5),
            (Branch((Code.f(self.state, d), c.bump(self.state))), 0.5),
        )

    def choose(self, c: Code, u: float) -> tuple[int, Branch, float]:
        """Branch selected by one uniform variate u in (0, 1)."""
        br = self.branches(c)
        n = len(br)
        if all(q == br[0][1] for _, q in br):
            k = min(int(u * n), n - 1)
        else:
            acc = 0.0
            k = n - 1
            for j, (_, q) in enumerate(br):
                acc += q
                if u < acc:
                    k = j
                    break
        return k, br[k][0], br[k][1]


def mechanism(table: MechanismTable, c: Code) -> list[tuple[Branch, float]]:
    return list(table.branches(c))


class CodeCache:
    """Per-patch memo of derivative expressions and their values at (t0, y0)."""

    def __init__(self, max_order: int = MAX_DERIVATIVE_ORDER):
        self.max_order = max_order
        self.exprs: dict[tuple[int, tuple[int, ...]], Expr] = {}
        self.values: dict[Code, float] = {}

    def reset(self):
        self.values.clear()

    def expr(self, sys: RhsSystem, comp: int, alpha: tuple[int, ...]) -> Expr:
        key = (comp, alpha)
        hit = self.exprs.get(key)
        if hit is not None:
            return hit
        if sum(alpha) > self.max_order:
            raise DerivativeOrderError(f"derivative order {sum(alpha)} exceeds cap {self.max_order}")
        if not any(alpha):
            e = sys.components[comp]
        else:
            axis = max(j for j, k in enumerate(alpha) if k)
            parent = list(alpha)
            parent[axis] -= 1
            e = differentiate(self.expr(sys, comp, tuple(parent)), axis)
        self.exprs[key] = e
        return e


def code_value(code: Code, sys: RhsSystem, cache: CodeCache | None = None) -> float:
    """Value at (t0, y0) of the function a code denotes."""
    code.check(sys.dimension)
    if code.is_identity:
        return float(sys.y0[code.comp])
    if cache is None:
        cache = CodeCache()
    hit = cache.values.get(code)
    if hit is not None:
        return hit
    v = evaluate(cache.expr(sys, code.comp, code.multi_index), sys.y0)
    cache.values[code] = v
    return v


def autonomize(f, y_initial: float, t_lo: float = 0.0, name: str = "") -> RhsSystem:
    """y' = f(t, y) with f over axes (0: t, 1: y) as a 2-dimensional system."""
    return RhsSystem([const(1.0), as_expr(f)], [t_lo, y_initial], t0=t_lo, time_axis=0, name=name)


def reduce_higher_order(f, initial: Sequence[float], t0: float = 0.0, name: str = "") -> RhsSystem:
    """y^(n) = f(t, y, ..., y^(n-1)), f over axes 0..n, as an (n+1)-system.

    ``initial`` holds y(t0), y'(t0), ..., y^(n-1)(t0); axis 0 is time.
    """
    n = len(initial)
    if n < 1:
        raise ValueError("need at least one initial value")
    comps = [const(1.0)] + [var(k + 1) for k in range(1, n)] + [as_expr(f)]
    return RhsSystem(comps, [t0, *initial], t0=t0, time_axis=0, name=name)


def reachable_codes(table: MechanismTable, d: int, depth: int, roots=None) -> list[Code]:
    if roots is None:
        roots = [table.root(i) for i in range(d)] if table.mode != SINGLE_TREE else [table.root(table.state)]
    seen = dict.fromkeys(roots)
    frontier = list(roots)
    for _ in range(depth):
        nxt = []
        for c in frontier:
            for br, _ in table.branches(c):
                for child in br.codes:
                    if child not in seen:
                        seen[child] = None
                        nxt.append(child)
        frontier = nxt
    return list(seen)


def initial_bound_K(sys: RhsSystem, table: MechanismTable, probe_depth: int = 6, cache: CodeCache | None = None) -> float:
    """max |c(y)(0)| over codes reachable within `probe_depth` mechanism steps.

    This under-approximates the supremum over the whole code set; it is a
    heuristic, not a certified bound.
    """
    if probe_depth < 0:
        raise ValueError("probe_depth must be >= 0")
    cache = cache or CodeCache()
    codes = reachable_codes(table, sys.dimension, probe_depth)
    return max(abs(code_value(c, sys, cache)) for c in codes)
