"""Butcher trees, B-series coefficients and their link to coding-tree shapes.

A Butcher tree is written in bracket notation: ``[]`` is a single vertex,
``[[][]]`` the cherry, ``[[[]]]`` the path of order 3.  Children are kept
sorted by encoding, so equal trees have equal encodings.

A coding tree for the autonomous mechanism maps to a Butcher tree by
following derivative spines: a node branching into (f_j, d_j g) gains the
Butcher tree of its first child as a new child vertex and continues as its
second child; a leaf closes the vertex.  From order 4 on several coding
shapes map to the same Butcher tree (the children of a vertex may be met
in any order along its spine); :func:`butcher_to_bin` returns the
representative that lists children in canonical order and
:func:`coding_shapes` returns all of them.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .codes import Code, CodeCache, MechanismTable, code_value
from .estimator import Estimate, draw_samples
from .expr import RhsSystem
from .sampling import SHAPE_MAX_NODES, SampleOptions, ShapeSignature

MAX_ENUM_ORDER = 8


class NotACodingShape(ValueError):
    pass


@dataclass(frozen=True)
class ButcherTree:
    children: tuple["ButcherTree", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(sorted(self.children, key=lambda c: c.encoding)))

    @cached_property
    def encoding(self) -> str:
        return "[" + "".join(c.encoding for c in self.children) + "]"

    @cached_property
    def order(self) -> int:
        return 1 + sum(c.order for c in self.children)

    def __len__(self):
        return self.order

    def __str__(self):
        return self.encoding

    def __hash__(self):
        return hash(self.encoding)

    def __eq__(self, other):
        return isinstance(other, ButcherTree) and self.encoding == other.encoding

    @classmethod
    def parse(cls, text: str) -> "ButcherTree":
        text = text.strip()
        stack: list[list] = []
        root = None
        for ch in text:
            if ch == "[":
                stack.append([])
            elif ch == "]":
                if not stack:
                    raise ValueError(f"unbalanced tree {text!r}")
                node = cls(tuple(stack.pop()))
                if stack:
                    stack[-1].append(node)
                elif root is None:
                    root = node
                else:
                    raise ValueError(f"more than one root in {text!r}")
            elif not ch.isspace():
                raise ValueError(f"unexpected character {ch!r} in {text!r}")
        if stack or root is None:
            raise ValueError(f"unbalanced tree {text!r}")
        return root


LEAF = ButcherTree()


def path(n: int) -> ButcherTree:
    t = LEAF
    for _ in range(n - 1):
        t = ButcherTree((t,))
    return t


def star(n: int) -> ButcherTree:
    """Root with n - 1 leaf children."""
    return ButcherTree((LEAF,) * (n - 1))


# ----------------------------------------------------------------------------
# enumeration


def _check_order(n):
    if not 1 <= n <= MAX_ENUM_ORDER:
        raise ValueError(f"enumeration order must lie in 1..{MAX_ENUM_ORDER}")


def _add_leaf_everywhere(t: ButcherTree):
    yield ButcherTree(t.children + (LEAF,))
    for k, c in enumerate(t.children):
        for grown in _add_leaf_everywhere(c):
            yield ButcherTree(t.children[:k] + (grown,) + t.children[k + 1:])


def enumerate_butcher_trees(max_order: int) -> dict[int, list[ButcherTree]]:
    """All rooted trees by order, grown leaf by leaf with deduplication."""
    _check_order(max_order)
    out = {1: [LEAF]}
    for n in range(2, max_order + 1):
        seen = {}
        for t in out[n - 1]:
            for g in _add_leaf_everywhere(t):
                seen.setdefault(g.encoding, g)
        out[n] = [seen[k] for k in sorted(seen)]
    return out


def _tree_from_levels(levels) -> ButcherTree:
    kids: list[list] = [[] for _ in levels]
    parent_of = []
    last_at_level = {}
    for k, lv in enumerate(levels):
        last_at_level[lv] = k
        parent_of.append(last_at_level[lv - 1] if lv > 1 else -1)
    built = [None] * len(levels)
    for k in range(len(levels) - 1, -1, -1):
        built[k] = ButcherTree(tuple(kids[k]))
        if parent_of[k] >= 0:
            kids[parent_of[k]].append(built[k])
    return built[0]


def level_sequences(n: int):
    """Canonical level sequences of rooted trees with n vertices, generated
    by the successor rule of Beyer and Hedetniemi."""
    if n == 1:
        yield (1,)
        return
    L = list(range(1, n + 1))
    while True:
        yield tuple(L)
        p = max((k for k in range(n) if L[k] > 2), default=-1)
        if p < 0:
            return
        q = max(k for k in range(p) if L[k] == L[p] - 1)
        for k in range(p, n):
            L[k] = L[k - (p - q)]


def enumerate_by_levels(max_order: int) -> dict[int, list[ButcherTree]]:
    _check_order(max_order)
    out = {}
    for n in range(1, max_order + 1):
        trees = {(_t := _tree_from_levels(seq)).encoding: _t for seq in level_sequences(n)}
        out[n] = [trees[k] for k in sorted(trees)]
    return out


# ----------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class TreeCoefficients:
    sigma: int
    gamma: int

    @property
    def nu(self) -> int:
        return self.sigma * self.gamma


@lru_cache(maxsize=None)
def _coeffs(enc: str) -> tuple[int, int]:
    t = ButcherTree.parse(enc)
    sigma, gamma = 1, t.order
    for child, k in Counter(t.children).items():
        s, g = _coeffs(child.encoding)
        sigma *= math.factorial(k) * s**k
        gamma *= g**k
    return sigma, gamma


def coefficients(t: ButcherTree) -> TreeCoefficients:
    return TreeCoefficients(*_coeffs(t.encoding))


def _parents(t: ButcherTree) -> list[int]:
    """Parent index of every vertex in preorder (root: -1)."""
    out = []

    def walk(node, parent):
        me = len(out)
        out.append(parent)
        for c in node.children:
            walk(c, me)

    walk(t, -1)
    return out


def brute_force_coefficients(t: ButcherTree) -> tuple[int, int]:
    """(sigma, gamma) by exhaustive search over vertex permutations.

    sigma counts root-fixing automorphisms; gamma is n! over the number of
    labelings increasing from the root (heap orderings of the fixed tree).
    """
    par = _parents(t)
    n = len(par)
    edges = {(p, k) for k, p in enumerate(par) if p >= 0}
    autos = 0
    monotone = 0
    for perm in itertools.permutations(range(n)):
        if perm[0] == 0 and all((perm[p], perm[k]) in edges for p, k in edges):
            autos += 1
        if all(perm[p] < perm[k] for p, k in edges):
            monotone += 1
    return autos, math.factorial(n) // monotone


# ----------------------------------------------------------------------------
# elementary differentials and partial sums


def elementary_differential(t: ButcherTree, sys: RhsSystem, cache: CodeCache | None = None) -> np.ndarray:
    """F(t)(y0): the |children|-th derivative of f at y0 applied to the
    children's differentials."""
    cache = cache if cache is not None else CodeCache()
    d = sys.dimension
    memo: dict[str, np.ndarray] = {}

    def F(node: ButcherTree) -> np.ndarray:
        hit = memo.get(node.encoding)
        if hit is not None:
            return hit
        kids = [F(c) for c in node.children]
        out = np.zeros(d)
        for idx in itertools.product(range(d), repeat=len(kids)):
            w = 1.0
            for k, j in enumerate(idx):
                w *= kids[k][j]
            if w == 0.0:
                continue
            alpha = [0] * d
            for j in idx:
                alpha[j] += 1
            for i in range(d):
                out[i] += w * code_value(Code.derivative(i, alpha), sys, cache)
        memo[node.encoding] = out
        return out

    return F(t)


def butcher_partial_sum(sys: RhsSystem, t: float, max_order: int) -> np.ndarray:
    """y0 + sum over trees of order <= max_order of t^|B| F(B) / nu(B)."""
    y = np.array(sys.y0, dtype=float)
    if max_order == 0:
        return y
    cache = CodeCache()
    for n, trees in enumerate_butcher_trees(max_order).items():
        for b in trees:
            y = y + t**n / coefficients(b).nu * elementary_differential(b, sys, cache)
    return y


# ----------------------------------------------------------------------------
# coding shapes


def _spine(t: ButcherTree, order) -> list[int]:
    out = []
    for c in order(t.children):
        out.append(2)
        out.extend(_spine(c, order))
    out.append(0)
    return out


def butcher_to_bin(t: ButcherTree) -> ShapeSignature:
    """Canonical coding shape of t: root edge Id -> f, then each vertex's
    children in canonical order along its derivative spine."""
    return ShapeSignature((1, *_spine(t, lambda ch: ch)))


def _spines(t: ButcherTree) -> set[tuple[int, ...]]:
    variants = set()
    for perm in set(itertools.permutations(t.children)):
        parts = [_spines(c) for c in perm]
        for combo in itertools.product(*parts):
            seq = []
            for s in combo:
                seq.append(2)
                seq.extend(s)
            seq.append(0)
            variants.add(tuple(seq))
    return variants


def coding_shapes(t: ButcherTree) -> list[ShapeSignature]:
    """Every coding shape whose Butcher tree is t (canonical one first)."""
    canon = butcher_to_bin(t)
    rest = [ShapeSignature((1, *s)) for s in sorted(_spines(t)) if (1, *s) != canon.counts]
    return [canon, *rest]


def bin_to_butcher(s: ShapeSignature) -> ButcherTree:
    c = s.counts
    if c[0] != 1:
        raise NotACodingShape(f"{s}: the root must have exactly one child")

    def vertex(pos):
        kids = []
        while True:
            if pos >= len(c):
                raise NotACodingShape(f"{s}: truncated shape")
            k = c[pos]
            if k == 0:
                return ButcherTree(tuple(kids)), pos + 1
            if k != 2:
                raise NotACodingShape(f"{s}: non-root nodes must have 0 or 2 children")
            sub, pos = vertex(pos + 1)
            kids.append(sub)

    tree, end = vertex(1)
    if end != len(c):
        raise NotACodingShape(f"{s}: trailing nodes")
    return tree


@dataclass
class ShapeEstimate:
    estimate: Estimate
    target: ButcherTree
    matches: int
    shape_counts: Counter


def _packed_shapes(t: ButcherTree, canonical_only: bool) -> np.ndarray:
    shapes = [butcher_to_bin(t)] if canonical_only else coding_shapes(t)
    return np.array([s.pack() for s in shapes], dtype=np.int64)


def shape_conditioned_estimate(
    sys: RhsSystem,
    table: MechanismTable,
    i: int,
    t: float,
    N: int,
    opts: SampleOptions | None,
    B: ButcherTree,
    seed: int = 0,
    canonical_only: bool = False,
    batch=None,
    backend: str | None = None,
) -> ShapeEstimate:
    """Mean over all N samples of H * 1{the coding tree's Butcher tree is B}.

    With ``canonical_only`` the indicator matches the single shape
    ``butcher_to_bin(B)`` instead; the two coincide up to order 3.
    """
    if 2 * B.order > SHAPE_MAX_NODES:
        raise ValueError("tree too large for packed shape matching")
    opts = opts or SampleOptions()
    if not opts.record_shape:
        opts = SampleOptions(opts.max_depth, True, opts.density, opts.max_order)
    b = batch if batch is not None else draw_samples(sys, table, i, t, N, opts, seed, backend=backend)
    ok = b.ok
    hit = np.isin(b.shape, _packed_shapes(B, canonical_only)) & ok
    x = np.where(hit, b.values, 0.0)[ok]
    n = x.size
    mean = float(x.mean())
    var = float(x.var(ddof=1)) if n > 1 else 0.0
    est = Estimate(mean, var, math.sqrt(var / n), n, int(N - n))
    counts = Counter(int(s) for s in b.shape[ok])
    return ShapeEstimate(est, B, int(hit.sum()), counts)


def shape_breakdown(batch) -> dict[str, tuple[float, int]]:
    """Per Butcher tree (bracket encoding): (sum of H / N, sample count).

    Trees whose root never branches (the y0 term) fall under ``"y0"``,
    shapes too long to pack under ``"overflow"``; aborted samples are left
    out.  The sums add up to the plain sample mean.
    """
    ok = batch.ok
    n = int(ok.sum())
    out: dict[str, list] = {}
    shapes, inverse, counts = np.unique(batch.shape[ok], return_inverse=True, return_counts=True)
    groups = np.split(batch.values[ok][np.argsort(inverse, kind="stable")], np.cumsum(counts)[:-1])
    # exact per-group sums so the parts add up to the mean up to round-off
    sums = [math.fsum(g) for g in groups]
    for s, tot, cnt in zip(shapes, sums, counts):
        sig = ShapeSignature.unpack(int(s))
        if sig is None:
            key = "overflow"
        elif sig.counts == (0,):
            key = "y0"
        else:
            key = str(bin_to_butcher(sig))
        acc = out.setdefault(key, [0.0, 0])
        acc[0] += tot / n
        acc[1] += int(cnt)
    return {k: (v[0], v[1]) for k, v in out.items()}
