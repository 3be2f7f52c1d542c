"""Batched coding-tree samplers.

Two interchangeable backends draw the same trees (same keys, same variates):

* ``numba``: depth-first traversal per sample with an explicit stack,
  compiled with ``@njit`` and spread over threads with ``prange``;
* ``numpy``: breadth-first, all particles of one generation at a time.

Set ``MCODE_NO_NUMBA=1`` (or run without numba installed) to select the
numpy backend.  Both support the autonomous and single-tree mechanisms;
custom mechanisms go through the reference sampler.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _rng
from ._rng import U_1, U_11, U_27, U_30, U_31, U_CHILD, U_DRAW, U_GOLDEN, U_M1, U_M2, INV_2_53
from ._rng import child_key_u64, sample_key_u64, uniform_u64
from .codes import AUTONOMOUS, CUSTOM, SINGLE_TREE, Code, CodeCache, MechanismTable
from .densities import EXPONENTIAL
from .expr import DerivativeOrderError, RhsSystem
from .jet import DerivativeTable
from .sampling import SHAPE_MAX_NODES, SampleOptions, ShapeSignature, sample_tree

ENV_FLAG = "MCODE_NO_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
    # the bundled TBB is too old; prefer OpenMP
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    return HAVE_NUMBA and os.environ.get(ENV_FLAG, "").lower() not in ("1", "true", "yes", "on")


def default_backend() -> str:
    return "numba" if numba_enabled() else "numpy"


if HAVE_NUMBA:
    njit = numba.njit
    prange = numba.prange
else:  # pragma: no cover

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range

# status codes shared by both backends
ST_OK = 0
ST_DEPTH = 1
ST_SINGULAR = 2
ST_NEED_ORDER = 3

MODE_AUTONOMOUS = 0
MODE_SINGLE = 1

_TWO_PI = 2.0 * math.pi
_SQRT_PI = math.sqrt(math.pi)
_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U2 = np.uint64(2)
BLOCK = 4096


# ----------------------------------------------------------------------------
# numba backend


@njit(cache=True)
def _mix_nb(z):
    z = (z ^ (z >> U_30)) * U_M1
    z = (z ^ (z >> U_27)) * U_M2
    return z ^ (z >> U_31)


@njit(cache=True)
def _sample_key_nb(base, index):
    return _mix_nb(base + (index + U_1) * U_GOLDEN)


@njit(cache=True)
def _child_key_nb(key, slot):
    return _mix_nb(key + (slot + U_1) * U_CHILD)


@njit(cache=True)
def _uniform_nb(key, j):
    z = _mix_nb(key ^ ((j + U_1) * U_DRAW))
    return ((z >> U_11) + 0.5) * INV_2_53


@njit(cache=True)
def _lifetime_nb(kind, rate, key):
    if kind == EXPONENTIAL:
        return -math.log(_uniform_nb(key, _U1)) / rate
    j = _U1
    while True:
        u1 = _uniform_nb(key, j)
        c = math.cos(_TWO_PI * _uniform_nb(key, j + U_1))
        tau = -math.log(u1) * (c * c)
        if tau > 0.0:
            return tau
        j += _U2


@njit(cache=True)
def _inv_density_nb(kind, rate, tau):
    if kind == EXPONENTIAL:
        return math.exp(rate * tau) / rate
    return math.sqrt(tau) * _SQRT_PI * math.exp(tau)


@njit(cache=True)
def _tail_nb(kind, rate, t):
    if kind == EXPONENTIAL:
        return math.exp(-rate * t)
    return math.erfc(math.sqrt(t))


@njit(cache=True)
def _tree_dfs(key0, root_isid, root_comp, root_flat, root_tot, horizon,
              mode, d, ta, st, y0, table, strides, K, complete,
              kind, rate, max_depth, record_shape,
              s_key, s_isid, s_comp, s_flat, s_tot, s_h, s_depth):
    s_key[0] = key0
    s_isid[0] = root_isid
    s_comp[0] = root_comp
    s_flat[0] = root_flat
    s_tot[0] = root_tot
    s_h[0] = horizon
    s_depth[0] = 0
    sp = 1
    H = 1.0
    nodes = 0
    leaves = 0
    maxd = 0
    status = ST_OK
    need = 0
    shape = np.int64(0)
    p3 = np.int64(1)
    pos = 0
    while sp > 0:
        sp -= 1
        key = s_key[sp]
        isid = s_isid[sp]
        comp = s_comp[sp]
        flat = s_flat[sp]
        tot = s_tot[sp]
        h = s_h[sp]
        depth = s_depth[sp]
        nodes += 1
        if depth > maxd:
            maxd = depth
        if depth > max_depth:
            status = ST_DEPTH
            break
        tau = _lifetime_nb(kind, rate, key)
        if tau > h:
            leaves += 1
            if isid:
                v = y0[comp]
            elif tot > K:
                if complete:
                    v = 0.0
                else:
                    status = ST_NEED_ORDER
                    need = tot
                    break
            else:
                v = table[comp, flat]
            if not np.isfinite(v):
                status = ST_SINGULAR
                break
            H *= v / _tail_nb(kind, rate, h)
            nch = 0
        else:
            u = _uniform_nb(key, _U0)
            hc = h - tau
            if isid:
                q = 1.0
                nch = 1
                s_key[sp] = _child_key_nb(key, _U0)
                s_isid[sp] = False
                s_comp[sp] = comp if mode == MODE_AUTONOMOUS else st
                s_flat[sp] = 0
                s_tot[sp] = 0
                s_h[sp] = hc
                s_depth[sp] = depth + 1
                sp += 1
            else:
                if mode == MODE_AUTONOMOUS:
                    j = int(u * d)
                    if j >= d:
                        j = d - 1
                    q = 1.0 / d
                    nch = 2
                    c0 = j
                    ax = j
                else:
                    q = 0.5
                    if u < 0.5:
                        nch = 1
                        ax = ta
                    else:
                        nch = 2
                        c0 = st
                        ax = st
                if nch == 2:
                    # slot 1 (derivative code) below slot 0 on the stack
                    s_key[sp] = _child_key_nb(key, _U1)
                    s_isid[sp] = False
                    s_comp[sp] = comp
                    s_flat[sp] = flat + strides[ax]
                    s_tot[sp] = tot + 1
                    s_h[sp] = hc
                    s_depth[sp] = depth + 1
                    sp += 1
                    s_key[sp] = _child_key_nb(key, _U0)
                    s_isid[sp] = False
                    s_comp[sp] = c0
                    s_flat[sp] = 0
                    s_tot[sp] = 0
                    s_h[sp] = hc
                    s_depth[sp] = depth + 1
                    sp += 1
                else:
                    s_key[sp] = _child_key_nb(key, _U0)
                    s_isid[sp] = False
                    s_comp[sp] = comp
                    s_flat[sp] = flat + strides[ax]
                    s_tot[sp] = tot + 1
                    s_h[sp] = hc
                    s_depth[sp] = depth + 1
                    sp += 1
            H *= _inv_density_nb(kind, rate, tau) / q
        if record_shape:
            if pos < SHAPE_MAX_NODES:
                shape += nch * p3
                p3 *= 3
            pos += 1
    if record_shape:
        if pos <= SHAPE_MAX_NODES:
            shape += p3
        else:
            shape = -1
    if status == ST_OK and not np.isfinite(H):
        status = ST_SINGULAR
    if status != ST_OK:
        shape = 0
    return H, status, nodes, leaves, maxd, shape, need


@njit(parallel=True, cache=True)
def _batch_dfs(indices, base, root_isid, root_comp, root_flat, root_tot, horizon,
               mode, d, ta, st, y0, table, strides, K, complete,
               kind, rate, max_depth, record_shape,
               out_v, out_st, out_nodes, out_leaves, out_depth, out_shape, out_need):
    n = indices.shape[0]
    nblk = (n + BLOCK - 1) // BLOCK
    cap = max_depth + 3
    for b in prange(nblk):
        s_key = np.empty(cap, np.uint64)
        s_isid = np.empty(cap, np.bool_)
        s_comp = np.empty(cap, np.int64)
        s_flat = np.empty(cap, np.int64)
        s_tot = np.empty(cap, np.int64)
        s_h = np.empty(cap, np.float64)
        s_depth = np.empty(cap, np.int64)
        lo = b * BLOCK
        hi = min(n, lo + BLOCK)
        for k in range(lo, hi):
            key0 = _sample_key_nb(base, np.uint64(indices[k]))
            r = _tree_dfs(key0, root_isid, root_comp, root_flat, root_tot, horizon,
                          mode, d, ta, st, y0, table, strides, K, complete,
                          kind, rate, max_depth, record_shape,
                          s_key, s_isid, s_comp, s_flat, s_tot, s_h, s_depth)
            out_v[k] = r[0]
            out_st[k] = r[1]
            out_nodes[k] = r[2]
            out_leaves[k] = r[3]
            out_depth[k] = r[4]
            out_shape[k] = r[5]
            out_need[k] = r[6]


# ----------------------------------------------------------------------------
# numpy backend


def _lifetime_np(kind, rate, keys):
    if kind == EXPONENTIAL:
        return -np.log(uniform_u64(keys, _U1)) / rate
    tau = np.empty(keys.shape)
    todo = np.arange(keys.size)
    j = _U1
    while todo.size:
        k = keys[todo]
        c = np.cos(_TWO_PI * uniform_u64(k, j + U_1))
        t = -np.log(uniform_u64(k, j)) * (c * c)
        good = t > 0.0
        tau[todo[good]] = t[good]
        todo = todo[~good]
        j += _U2
    return tau


def _inv_density_np(kind, rate, tau):
    if kind == EXPONENTIAL:
        return np.exp(rate * tau) / rate
    return np.sqrt(tau) * _SQRT_PI * np.exp(tau)


def _tail_np(kind, rate, t):
    if kind == EXPONENTIAL:
        return np.exp(-rate * t)
    return special.erfc(np.sqrt(t))


_POW3 = np.array([3**k for k in range(SHAPE_MAX_NODES + 1)], dtype=np.int64)


def _batch_bfs(indices, base, root_isid, root_comp, root_flat, root_tot, horizon,
               mode, d, ta, st, y0, table, strides, K, complete,
               kind, rate, max_depth, record_shape):
    n = indices.shape[0]
    H = np.ones(n)
    status = np.zeros(n, np.int64)
    nodes = np.zeros(n, np.int64)
    leaves = np.zeros(n, np.int64)
    maxd = np.zeros(n, np.int64)
    need = np.zeros(n, np.int64)

    sid = np.arange(n)
    keys = sample_key_u64(base, indices.astype(np.uint64))
    isid = np.full(n, bool(root_isid))
    comp = np.full(n, root_comp, np.int64)
    flat = np.full(n, root_flat, np.int64)
    tot = np.full(n, root_tot, np.int64)
    h = np.full(n, float(horizon))
    parent = np.full(n, -1, np.int64)
    slot = np.zeros(n, np.int64)
    gens = []
    depth = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while sid.size:
            live = status[sid] == ST_OK
            if not live.all():
                sid, keys, isid, comp = sid[live], keys[live], isid[live], comp[live]
                flat, tot, h, parent, slot = flat[live], tot[live], h[live], parent[live], slot[live]
                if not sid.size:
                    break
            nodes += np.bincount(sid, minlength=n)
            maxd[sid] = depth
            if depth > max_depth:
                status[sid] = ST_DEPTH
                break
            tau = _lifetime_np(kind, rate, keys)
            leaf = tau > h
            nch = np.zeros(sid.size, np.int64)

            if leaf.any():
                lsid = sid[leaf]
                leaves += np.bincount(lsid, minlength=n)
                lcomp, lflat, ltot, lid = comp[leaf], flat[leaf], tot[leaf], isid[leaf]
                over = (ltot > K) & ~lid
                safe = np.where(over, 0, lflat)
                v = np.where(lid, y0[lcomp], table[lcomp, safe])
                if over.any():
                    if complete:
                        v[over] = 0.0
                    else:
                        status[lsid[over]] = ST_NEED_ORDER
                        np.maximum.at(need, lsid[over], ltot[over])
                bad = ~np.isfinite(v) & ~over
                if bad.any():
                    status[lsid[bad]] = np.where(status[lsid[bad]] == ST_OK, ST_SINGULAR, status[lsid[bad]])
                np.multiply.at(H, lsid, v / _tail_np(kind, rate, h[leaf]))

            br = ~leaf
            pos = np.nonzero(br)[0]
            if pos.size:
                bkey = keys[br]
                bsid = sid[br]
                bid = isid[br]
                bcomp, bflat, btot = comp[br], flat[br], tot[br]
                hc = h[br] - tau[br]
                u = uniform_u64(bkey, _U0)
                q = np.ones(pos.size)
                two = np.zeros(pos.size, bool)
                c0 = np.where(bid, bcomp if mode == MODE_AUTONOMOUS else st, 0)
                c1 = bcomp.copy()
                ax = np.zeros(pos.size, np.int64)
                nd = ~bid
                if mode == MODE_AUTONOMOUS:
                    j = np.minimum((u * d).astype(np.int64), d - 1)
                    q[nd] = 1.0 / d
                    two[nd] = True
                    c0 = np.where(nd, j, c0)
                    ax = j
                else:
                    q[nd] = 0.5
                    pick2 = nd & (u >= 0.5)
                    two = pick2
                    c0 = np.where(pick2, st, c0)
                    ax = np.where(pick2, st, ta)
                one_deriv = nd & ~two
                # slot 0: f-code (or the lone derivative child in single-tree mode)
                s0_comp = np.where(one_deriv, bcomp, c0)
                s0_flat = np.where(one_deriv, bflat + strides[ax], 0)
                s0_tot = np.where(one_deriv, btot + 1, 0)
                nch[pos] = np.where(two, 2, 1)
                np.multiply.at(H, bsid, _inv_density_np(kind, rate, tau[br]) / q)

                t2 = np.nonzero(two)[0]
                nxt_sid = np.concatenate([bsid, bsid[t2]])
                nxt_keys = np.concatenate([child_key_u64(bkey, _U0), child_key_u64(bkey[t2], _U1)])
                nxt_isid = np.zeros(nxt_sid.size, bool)
                nxt_comp = np.concatenate([s0_comp, c1[t2]])
                nxt_flat = np.concatenate([s0_flat, bflat[t2] + strides[ax[t2]]])
                nxt_tot = np.concatenate([s0_tot, btot[t2] + 1])
                nxt_h = np.concatenate([hc, hc[t2]])
                nxt_parent = np.concatenate([pos, pos[t2]])
                nxt_slot = np.concatenate([np.zeros(pos.size, np.int64), np.ones(t2.size, np.int64)])
            else:
                nxt_sid = sid[:0]
            if record_shape:
                gens.append((nch, parent, slot))
            if not pos.size:
                break
            sid, keys, isid, comp = nxt_sid, nxt_keys, nxt_isid, nxt_comp
            flat, tot, h, parent, slot = nxt_flat, nxt_tot, nxt_h, nxt_parent, nxt_slot
            depth += 1

    final = H
    status[(status == ST_OK) & ~np.isfinite(final)] = ST_SINGULAR
    shape = np.zeros(n, np.int64)
    if record_shape and gens:
        shape = _shapes_from_generations(gens, n)
        shape[status != ST_OK] = 0
    return final, status, nodes, leaves, maxd, shape, need


def _shapes_from_generations(gens, n):
    """Combine per-generation child counts bottom-up into packed preorder codes."""
    code_next = length_next = parent_next = slot_next = None
    for nch, parent, slot in reversed(gens):
        m = nch.size
        c1c = np.zeros(m, np.int64)
        c1l = np.zeros(m, np.int64)
        c2c = np.zeros(m, np.int64)
        c2l = np.zeros(m, np.int64)
        if code_next is not None:
            s0 = slot_next == 0
            c1c[parent_next[s0]] = code_next[s0]
            c1l[parent_next[s0]] = length_next[s0]
            s1 = ~s0
            c2c[parent_next[s1]] = code_next[s1]
            c2l[parent_next[s1]] = length_next[s1]
        length = 1 + c1l + c2l
        ok = (length <= SHAPE_MAX_NODES) & (c1l >= 0) & (c2l >= 0)
        code = np.zeros(m, np.int64)
        e2 = np.minimum(1 + np.maximum(c1l, 0), SHAPE_MAX_NODES)
        code[ok] = nch[ok] + 3 * c1c[ok] + _POW3[e2[ok]] * c2c[ok]
        length = np.where(ok, length, -1)
        code_next, length_next, parent_next, slot_next = code, length, parent, slot
    # generation 0 holds the roots in sample order
    packed = np.full(n, -1, np.int64)
    good = length_next > 0
    packed[good] = code_next[good] + _POW3[length_next[good]]
    return packed


# ----------------------------------------------------------------------------
# dispatch


@dataclass
class Batch:
    values: np.ndarray
    status: np.ndarray
    nodes: np.ndarray
    leaves: np.ndarray
    depth: np.ndarray
    shape: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == ST_OK

    def shapes(self) -> list[ShapeSignature | None]:
        return [ShapeSignature.unpack(int(s)) for s in self.shape]


class JetCache:
    """Derivative table for one (system, initial point); grows on demand."""

    def __init__(self, sys: RhsSystem, order: int = 8, max_order: int = 64):
        self.sys = sys
        self.max_order = max_order
        degrees = [c.polynomial_degree() for c in sys.components]
        if all(deg is not None for deg in degrees):
            order = min(order, max(max(degrees), 1))
        self.table = DerivativeTable(sys.components, sys.y0, order)

    def ensure(self, order: int) -> DerivativeTable:
        if order > self.max_order:
            raise DerivativeOrderError(f"derivative order {order} exceeds cap {self.max_order}")
        if order > self.table.order and not self.table.complete:
            new = min(self.max_order, max(order, 2 * self.table.order))
            self.table = DerivativeTable(self.sys.components, self.sys.y0, new)
        return self.table


def _root_fields(root: Code, table: DerivativeTable):
    if root.is_identity:
        return True, root.comp, 0, 0
    alpha = root.multi_index
    return False, root.comp, int(np.dot(table.strides, alpha)), int(sum(alpha))


def draw(
    sys: RhsSystem,
    mech: MechanismTable,
    root: Code,
    horizon: float,
    indices: np.ndarray,
    opts: SampleOptions,
    base_key: int,
    jets: JetCache | None = None,
    cache: CodeCache | None = None,
    backend: str | None = None,
) -> Batch:
    """Draw samples ``indices`` of the stream ``base_key``."""
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    n = indices.size
    if mech.mode == CUSTOM:
        return _draw_reference(sys, mech, root, horizon, indices, opts, base_key, cache)
    backend = backend or default_backend()
    if backend == "reference":
        return _draw_reference(sys, mech, root, horizon, indices, opts, base_key, cache)
    root.check(sys.dimension)
    jets = jets or JetCache(sys, max_order=opts.max_order)
    if root.order > jets.table.order:
        jets.ensure(root.order)
    mode = MODE_AUTONOMOUS if mech.mode == AUTONOMOUS else MODE_SINGLE
    dens = opts.density
    out = Batch(np.empty(n), np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n, np.int64),
                np.empty(n, np.int64), np.zeros(n, np.int64))
    todo = np.arange(n)
    while todo.size:
        tab = jets.table
        args = (indices[todo], np.uint64(base_key), *_root_fields(root, tab), float(horizon),
                mode, sys.dimension, mech.time_axis, mech.state, sys.y0, tab.values, tab.strides,
                tab.order, tab.complete, dens.kind, float(dens.rate), int(opts.max_depth),
                bool(opts.record_shape))
        if backend == "numba":
            m = todo.size
            res = (np.empty(m), np.empty(m, np.int64), np.empty(m, np.int64), np.empty(m, np.int64),
                   np.empty(m, np.int64), np.empty(m, np.int64), np.empty(m, np.int64))
            _batch_dfs(*args, *res)
        elif backend == "numpy":
            res = _batch_bfs(*args)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        v, st, nd, lv, dp, sh, need = res
        out.values[todo] = v
        out.status[todo] = st
        out.nodes[todo] = nd
        out.leaves[todo] = lv
        out.depth[todo] = dp
        out.shape[todo] = sh
        redo = st == ST_NEED_ORDER
        if not redo.any():
            break
        jets.ensure(int(need[redo].max()))
        todo = todo[redo]
    return out


_STATUS_CODE = {"ok": ST_OK, "aborted_depth": ST_DEPTH, "aborted_singular": ST_SINGULAR}


def _draw_reference(sys, mech, root, horizon, indices, opts, base_key, cache):
    n = indices.size
    cache = cache if cache is not None else CodeCache(opts.max_order)
    out = Batch(np.empty(n), np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n, np.int64),
                np.empty(n, np.int64), np.zeros(n, np.int64))
    for k, idx in enumerate(indices):
        s = sample_tree(root, horizon, sys, mech, opts, _rng.sample_key(base_key, int(idx)), cache)
        out.values[k] = s.value
        out.status[k] = _STATUS_CODE[s.status]
        out.nodes[k] = s.node_count
        out.leaves[k] = s.leaf_count
        out.depth[k] = s.max_depth_reached
        if s.shape is not None:
            out.shape[k] = s.shape.pack()
    return out


def set_threads(k: int) -> None:
    if HAVE_NUMBA and k:
        numba.set_num_threads(min(int(k), numba.config.NUMBA_NUM_THREADS))
