"""Coding-tree sampling and the multiplicative functional.

This module holds the reference (pure Python) sampler, which supports every
mechanism mode, shape recording and node traces.  The batched samplers in
:mod:`mcode.kernels` draw the same trees for the autonomous and single-tree
mechanisms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import _rng
from .codes import Code, CodeCache, MechanismTable, code_value
from .densities import BRANCH_DRAW, LifetimeDensity, inv_density_scalar, lifetime_from_key, tail_scalar
from .expr import RhsSystem, SingularEvaluation

OK = "ok"
ABORTED_DEPTH = "aborted_depth"
ABORTED_SINGULAR = "aborted_singular"

SHAPE_MAX_NODES = 39


@dataclass(frozen=True)
class ShapeSignature:
    """Child counts (0, 1 or 2) of every node in depth-first preorder,
    children visited in branch-tuple order."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if not self.counts or any(c not in (0, 1, 2) for c in self.counts):
            raise ValueError(f"invalid shape {self.counts}")

    @classmethod
    def parse(cls, text: str) -> "ShapeSignature":
        return cls(tuple(int(ch) for ch in text.strip()))

    def __str__(self):
        return "".join(map(str, self.counts))

    def __len__(self):
        return len(self.counts)

    def pack(self) -> int:
        """Base-3 integer with a leading marker digit; -1 if too long."""
        n = len(self.counts)
        if n > SHAPE_MAX_NODES:
            return -1
        return sum(c * 3**k for k, c in enumerate(self.counts)) + 3**n

    @classmethod
    def unpack(cls, packed: int) -> "ShapeSignature | None":
        if packed <= 0:
            return None
        digits = []
        while packed >= 3:
            packed, r = divmod(packed, 3)
            digits.append(r)
        if packed != 1:
            raise ValueError("not a packed shape")
        return cls(tuple(digits))


@dataclass(frozen=True)
class SampleOptions:
    max_depth: int = 10_000
    record_shape: bool = False
    density: LifetimeDensity = field(default_factory=LifetimeDensity)
    max_order: int = 64

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass(frozen=True)
class TraceNode:
    depth: int
    code: Code
    tau: float
    branch: int  # -1 for a leaf
    horizon: float
    q: float = 1.0

    def line(self) -> str:
        return f"{self.depth}\t{self.code}\t{self.tau:.17g}\t{self.branch}\t{self.horizon:.17g}\t{self.q:.17g}"


TRACE_HEADER = "# depth\tcode\ttau\tbranch\thorizon\tq"


@dataclass
class TreeSample:
    value: float
    node_count: int
    leaf_count: int
    max_depth_reached: int
    status: str = OK
    shape: ShapeSignature | None = None
    trace: list[TraceNode] | None = None

    @property
    def ok(self) -> bool:
        return self.status == OK


def sample_tree(
    c: Code,
    horizon: float,
    sys: RhsSystem,
    table: MechanismTable,
    opts: SampleOptions,
    key: int,
    cache: CodeCache | None = None,
    trace: bool = False,
) -> TreeSample:
    """Draw one coding tree rooted at `c` and return its functional H.

    `key` is the sample's 64-bit stream key (see :func:`mcode._rng.sample_key`).
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    cache = cache if cache is not None else CodeCache()
    dens = opts.density
    kind, rate = dens.kind, dens.rate
    H = 1.0
    nodes = leaves = maxd = 0
    status = OK
    digits = []
    nodes_trace = [] if trace else None
    stack = [(key, c, float(horizon), 0)]
    while stack:
        k, code, h, depth = stack.pop()
        nodes += 1
        if depth > maxd:
            maxd = depth
        if depth > opts.max_depth:
            status = ABORTED_DEPTH
            break
        tau = lifetime_from_key(kind, rate, k)
        if tau > h:
            leaves += 1
            try:
                v = code_value(code, sys, cache)
            except SingularEvaluation:
                status = ABORTED_SINGULAR
                break
            H *= v / tail_scalar(kind, rate, h)
            digits.append(0)
            if trace:
                nodes_trace.append(TraceNode(depth, code, tau, -1, h))
        else:
            j, br, q = table.choose(code, _rng.uniform(k, BRANCH_DRAW))
            H *= inv_density_scalar(kind, rate, tau) / q
            digits.append(len(br.codes))
            if trace:
                nodes_trace.append(TraceNode(depth, code, tau, j, h, q))
            for slot in range(len(br.codes) - 1, -1, -1):
                stack.append((_rng.child_key(k, slot), br.codes[slot], h - tau, depth + 1))
    if status == OK and not abs(H) < float("inf"):
        status = ABORTED_SINGULAR
    shape = ShapeSignature(tuple(digits)) if opts.record_shape and status == OK else None
    return TreeSample(H, nodes, leaves, maxd, status, shape, nodes_trace)


def shape_of(sample: TreeSample) -> ShapeSignature:
    if sample.shape is not None:
        return sample.shape
    if sample.trace is not None:
        # in preorder, a node's parent is the latest earlier node one level up
        counts = [0] * len(sample.trace)
        open_nodes: list[int] = []
        for i, node in enumerate(sample.trace):
            del open_nodes[node.depth :]
            if open_nodes:
                counts[open_nodes[-1]] += 1
            open_nodes.append(i)
        return ShapeSignature(tuple(counts))
    raise ValueError("sample carries neither a shape nor a trace; set record_shape")


def recompute_from_trace(trace, sys: RhsSystem, density: LifetimeDensity, cache: CodeCache | None = None) -> float:
    """Rebuild H from recorded lifetimes and branch probabilities."""
    cache = cache if cache is not None else CodeCache()
    H = 1.0
    for node in trace:
        if node.branch < 0:
            H *= code_value(node.code, sys, cache) / tail_scalar(density.kind, density.rate, node.horizon)
        else:
            H *= inv_density_scalar(density.kind, density.rate, node.tau) / node.q
    return H


def format_trace(trace) -> str:
    return "\n".join([TRACE_HEADER] + [n.line() for n in trace]) + "\n"
