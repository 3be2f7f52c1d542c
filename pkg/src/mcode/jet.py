"""Truncated multivariate Taylor arithmetic.

A jet of order K in d variables is a dense array of shape (K+1,)*d holding
normalized Taylor coefficients ``D^a f(x0) / a!`` for total degree |a| <= K
(entries with |a| > K are kept at zero).  Propagating jets through an
expression tree gives every partial derivative up to order K at one point,
at polynomial cost, which is what the compiled samplers need as a lookup
table.  Symbolic differentiation remains the reference route.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .expr import Expr


def _degree_mask(order: int, dim: int) -> np.ndarray:
    grids = np.indices((order + 1,) * dim)
    return grids.sum(axis=0) <= order


class JetContext:
    def __init__(self, order: int, dim: int):
        self.order = order
        self.dim = dim
        self.shape = (order + 1,) * dim
        self.mask = _degree_mask(order, dim)
        self.indices = [a for a in itertools.product(range(order + 1), repeat=dim) if sum(a) <= order]
        fact = np.ones(self.shape)
        for a in self.indices:
            fact[a] = math.prod(math.factorial(k) for k in a)
        self.factorials = fact

    def constant(self, c: float) -> np.ndarray:
        out = np.zeros(self.shape)
        out[(0,) * self.dim] = c
        return out

    def variable(self, axis: int, x0: float) -> np.ndarray:
        out = self.constant(x0)
        if self.order >= 1:
            idx = [0] * self.dim
            idx[axis] = 1
            out[tuple(idx)] = 1.0
        return out

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        K = self.order
        out = np.zeros(self.shape)
        for alpha in self.indices:
            c = a[alpha]
            if c == 0.0:
                continue
            src = tuple(slice(0, K + 1 - k) for k in alpha)
            dst = tuple(slice(k, K + 1) for k in alpha)
            out[dst] += c * b[src]
        out[~self.mask] = 0.0
        return out

    def compose(self, coeffs, u: np.ndarray) -> np.ndarray:
        """g(u) from univariate Taylor coefficients of g at u(x0)."""
        zero = (0,) * self.dim
        delta = u.copy()
        delta[zero] = 0.0
        out = self.constant(coeffs[0])
        term = self.constant(1.0)
        for k in range(1, self.order + 1):
            term = self.mul(term, delta)
            if coeffs[k] != 0.0:
                out = out + coeffs[k] * term
        return out


def _series_mul(a, b, n):
    return np.array([sum(a[j] * b[k - j] for j in range(k + 1)) for k in range(n)])


def _series_recip(a, n):
    out = np.zeros(n)
    out[0] = 1.0 / a[0]
    for k in range(1, n):
        out[k] = -sum(a[j] * out[k - j] for j in range(1, k + 1)) / a[0]
    return out


def univariate_coeffs(kind: str, x0: float, n: int) -> np.ndarray:
    """Taylor coefficients g^(k)(x0)/k!, k < n, of a primitive g."""
    k = np.arange(n)
    fact = np.array([math.factorial(int(j)) for j in k], dtype=float)
    with np.errstate(all="ignore"):
        if kind == "neg":
            out = np.zeros(n)
            out[0] = -x0
            if n > 1:
                out[1] = -1.0
            return out
        if kind == "exp":
            return math.exp(x0) / fact
        if kind == "sin":
            cyc = np.array([math.sin(x0), math.cos(x0), -math.sin(x0), -math.cos(x0)])
            return cyc[k % 4] / fact
        if kind == "cos":
            cyc = np.array([math.cos(x0), -math.sin(x0), -math.cos(x0), math.sin(x0)])
            return cyc[k % 4] / fact
        if kind == "log":
            if x0 <= 0.0:
                return np.full(n, np.nan)
            out = np.empty(n)
            out[0] = math.log(x0)
            j = k[1:]
            out[1:] = (-1.0) ** (j + 1) / (j * x0**j)
            return out
        if kind == "sqrt":
            if x0 <= 0.0:
                return np.full(n, np.nan)
            out = np.empty(n)
            c = 1.0
            for j in range(n):
                out[j] = c * math.sqrt(x0) / x0**j
                c *= (0.5 - j) / (j + 1)
            return out
        if kind == "recip":
            if x0 == 0.0:
                return np.full(n, np.nan)
            return (-1.0) ** k / x0 ** (k + 1)
        if kind == "atan":
            # atan' = 1/(1 + (x0 + s)^2), integrated term by term
            q = np.zeros(max(n, 3))
            q[0] = 1.0 + x0 * x0
            q[1] = 2.0 * x0
            q[2] = 1.0
            r = _series_recip(q, n)
            out = np.empty(n)
            out[0] = math.atan(x0)
            out[1:] = r[: n - 1] / np.arange(1, n)
            return out
        if kind == "tanh":
            # T' = 1 - T^2
            out = np.zeros(n)
            out[0] = math.tanh(x0)
            for j in range(n - 1):
                sq = sum(out[i] * out[j - i] for i in range(j + 1))
                out[j + 1] = ((1.0 if j == 0 else 0.0) - sq) / (j + 1)
            return out
    raise ValueError(f"no series for {kind!r}")


def expr_jet(e: Expr, ctx: JetContext, point, memo=None) -> np.ndarray:
    if memo is None:
        memo = {}
    hit = memo.get(e)
    if hit is not None:
        return hit
    zero = (0,) * ctx.dim
    k = e.kind
    n = ctx.order + 1
    if k == "const":
        r = ctx.constant(e.value)
    elif k == "var":
        r = ctx.variable(e.value, float(point[e.value]))
    elif k in ("add", "sub"):
        a = expr_jet(e.children[0], ctx, point, memo)
        b = expr_jet(e.children[1], ctx, point, memo)
        r = a + b if k == "add" else a - b
    elif k == "mul":
        a = expr_jet(e.children[0], ctx, point, memo)
        b = expr_jet(e.children[1], ctx, point, memo)
        r = ctx.mul(a, b)
    elif k == "div":
        a = expr_jet(e.children[0], ctx, point, memo)
        b = expr_jet(e.children[1], ctx, point, memo)
        r = ctx.mul(a, ctx.compose(univariate_coeffs("recip", b[zero], n), b))
    elif k == "pow":
        u = expr_jet(e.children[0], ctx, point, memo)
        p = e.value
        if p < 0:
            u = ctx.compose(univariate_coeffs("recip", u[zero], n), u)
            p = -p
        r = ctx.constant(1.0)
        base = u
        while p:
            if p & 1:
                r = ctx.mul(r, base)
            p >>= 1
            if p:
                base = ctx.mul(base, base)
    else:
        u = expr_jet(e.children[0], ctx, point, memo)
        if k == "neg":
            r = -u
        else:
            r = ctx.compose(univariate_coeffs(k, u[zero], n), u)
    memo[e] = r
    return r


class DerivativeTable:
    """All partial derivatives D^a f_i(y0), |a| <= order, for each component.

    values[i] is a flat array indexed by sum_j a_j * (order+1)**j;
    ``complete`` is True when every component is a polynomial whose degree
    does not exceed ``order`` (higher derivatives are then exactly zero).
    """

    def __init__(self, components, y0, order: int):
        self.components = tuple(components)
        self.y0 = np.asarray(y0, dtype=float)
        self.order = int(order)
        d = len(self.components)
        self.dim = d
        ctx = JetContext(self.order, d)
        rows = []
        with np.errstate(all="ignore"):
            for c in self.components:
                jet = expr_jet(c, ctx, self.y0)
                deriv = np.where(ctx.mask, jet * ctx.factorials, 0.0)
                rows.append(deriv.reshape(-1, order="F"))
        self.values = np.ascontiguousarray(np.array(rows))
        self.strides = np.array([(self.order + 1) ** j for j in range(d)], dtype=np.int64)
        degrees = [c.polynomial_degree() for c in self.components]
        self.complete = all(deg is not None and deg <= self.order for deg in degrees)

    def value(self, comp: int, alpha) -> float:
        if sum(alpha) > self.order:
            if self.complete:
                return 0.0
            raise IndexError(f"derivative order {sum(alpha)} beyond table order {self.order}")
        return float(self.values[comp, int(np.dot(self.strides, alpha))])
