import math
from fractions import Fraction

import numpy as np
import pytest

from mcode.butcher import (
    LEAF,
    ButcherTree,
    NotACodingShape,
    bin_to_butcher,
    brute_force_coefficients,
    butcher_partial_sum,
    butcher_to_bin,
    coding_shapes,
    coefficients,
    elementary_differential,
    enumerate_butcher_trees,
    enumerate_by_levels,
    path,
    shape_breakdown,
    shape_conditioned_estimate,
    star,
)
from mcode.codes import MechanismTable
from mcode.estimator import draw_samples
from mcode.expr import RhsSystem
from mcode.problems import builtin_problem, rk_oracle
from mcode.sampling import SampleOptions, ShapeSignature

# rooted unlabeled trees by number of vertices
ROOTED_TREE_COUNTS = [1, 1, 2, 4, 9, 20, 48, 115]
QUAD = RhsSystem(["y0^2"], [1.0])
AUT1 = MechanismTable.autonomous(1)
CHERRY = ButcherTree.parse("[[][]]")


def test_enumeration_counts():
    trees = enumerate_butcher_trees(8)
    assert [len(trees[n]) for n in range(1, 9)] == ROOTED_TREE_COUNTS
    assert trees[1] == [LEAF]
    for n, group in trees.items():
        assert len(set(group)) == len(group)
        assert all(b.order == n for b in group)


def test_two_enumerators_agree():
    a = enumerate_butcher_trees(7)
    b = enumerate_by_levels(7)
    for n in range(1, 8):
        assert set(a[n]) == set(b[n])
    with pytest.raises(ValueError):
        enumerate_butcher_trees(9)


def test_parse_and_print():
    t = ButcherTree.parse("[[][[]]]")
    assert str(t) == "[[[]][]]" and t.order == 4
    assert ButcherTree.parse("[ [] [[]] ]") == t
    for bad in ("[", "[]]", "[][]", "[x]", ""):
        with pytest.raises(ValueError):
            ButcherTree.parse(bad)
    assert path(3) == ButcherTree.parse("[[[]]]")
    assert star(4) == ButcherTree.parse("[[][][]]")


def test_coefficient_examples():
    c = coefficients(LEAF)
    assert (c.sigma, c.gamma, c.nu) == (1, 1, 1)
    assert coefficients(path(3)).nu == 6
    ch = coefficients(CHERRY)
    assert (ch.sigma, ch.gamma, ch.nu) == (2, 3, 6)
    st = coefficients(star(4))
    assert (st.sigma, st.gamma, st.nu) == (6, 4, 24)


def test_coefficients_against_brute_force():
    for n, group in enumerate_butcher_trees(6).items():
        for b in group:
            c = coefficients(b)
            assert (c.sigma, c.gamma) == brute_force_coefficients(b), str(b)


def test_sigma_counts_labeled_trees():
    # each shape has n!/sigma labelings; rooted labeled trees number n^(n-1)
    for n, group in enumerate_butcher_trees(7).items():
        assert sum(math.factorial(n) // coefficients(b).sigma for b in group) == n ** (n - 1)


def test_elementary_differentials_quadratic():
    assert elementary_differential(LEAF, QUAD)[0] == 1.0
    assert elementary_differential(path(2), QUAD)[0] == 2.0
    assert elementary_differential(CHERRY, QUAD)[0] == 2.0
    assert elementary_differential(star(4), QUAD)[0] == 0.0


def test_quadratic_b_series_coefficients_are_one():
    for n, group in enumerate_butcher_trees(5).items():
        total = Fraction(0)
        for b in group:
            c = elementary_differential(b, QUAD)[0]
            assert c == int(c)
            total += Fraction(int(c), coefficients(b).nu)
        assert total == 1


def test_partial_sum_examples():
    assert butcher_partial_sum(QUAD, 0.1, 3)[0] == pytest.approx(1.111, abs=1e-15)
    assert list(butcher_partial_sum(QUAD, 0.3, 0)) == [1.0]
    lin = RhsSystem(["y0"], [1.0])
    assert butcher_partial_sum(lin, 1.0, 4)[0] == pytest.approx(1 + 1 + 1 / 2 + 1 / 6 + 1 / 24, rel=1e-15)


def test_partial_sum_linear_system_is_exponential_series():
    A = np.array([[0.0, 1.0], [-2.0, 0.3]])
    sys = RhsSystem(["y1", "-2*y0 + 0.3*y1"], [1.0, -0.5])
    t = 0.7
    want = sum(np.linalg.matrix_power(A, k) @ sys.y0 * t**k / math.factorial(k) for k in range(7))
    np.testing.assert_allclose(butcher_partial_sum(sys, t, 6), want, rtol=1e-13)


def test_partial_sum_matches_flow_for_small_t():
    sys = builtin_problem("system316f").system
    h = 0.02
    got = butcher_partial_sum(sys, h, 7)
    want = rk_oracle(sys, sys.t0 + h, 1e-4)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_bin_small_orders():
    assert butcher_to_bin(LEAF) == ShapeSignature((1, 0))
    assert butcher_to_bin(path(2)) == ShapeSignature((1, 2, 0, 0))
    assert bin_to_butcher(ShapeSignature((1, 0))) == LEAF
    assert bin_to_butcher(ShapeSignature((1, 2, 0, 0))) == path(2)


def test_bin_roundtrip_and_shape_counts():
    for n, group in enumerate_butcher_trees(6).items():
        total = 0
        for b in group:
            assert bin_to_butcher(butcher_to_bin(b)) == b
            shapes = coding_shapes(b)
            assert shapes[0] == butcher_to_bin(b)
            assert len(set(shapes)) == len(shapes)
            assert all(bin_to_butcher(s) == b for s in shapes)
            assert all(len(s) == 2 * n for s in shapes)
            total += len(shapes)
        # coding shapes with n Butcher vertices are plane trees: Catalan(n - 1)
        assert total == math.comb(2 * (n - 1), n - 1) // n


@pytest.mark.parametrize("text", ["0", "11", "120", "1201", "1210", "100"])
def test_unreachable_shapes(text):
    with pytest.raises(NotACodingShape):
        bin_to_butcher(ShapeSignature.parse(text))


@pytest.fixture(scope="module")
def quad_batch():
    opts = SampleOptions(record_shape=True)
    return draw_samples(QUAD, AUT1, 0, 0.2, 1_000_000, opts, seed=13)


def test_shape_conditioned_examples(quad_batch):
    t = 0.2
    for b, target in ((LEAF, 0.2), (path(2), 0.04)):
        se = shape_conditioned_estimate(QUAD, AUT1, 0, t, 1_000_000, None, b, batch=quad_batch)
        assert se.target == b and se.matches > 0
        assert abs(se.estimate.mean - target) <= 4 * se.estimate.std_error


def test_shape_conditioned_orders_up_to_four(quad_batch):
    t = 0.2
    for n, group in enumerate_butcher_trees(4).items():
        for b in group:
            term = t**n * elementary_differential(b, QUAD)[0] / coefficients(b).nu
            est = shape_conditioned_estimate(QUAD, AUT1, 0, t, 1_000_000, None, b, batch=quad_batch).estimate
            assert abs(est.mean - term) <= 5 * est.std_error, str(b)


def test_sum_over_low_orders_matches_partial_sum(quad_batch):
    b = quad_batch
    ok = b.ok
    allowed = [s.pack() for n, g in enumerate_butcher_trees(3).items() for t in g for s in coding_shapes(t)]
    allowed.append(ShapeSignature((0,)).pack())
    x = np.where(np.isin(b.shape, allowed), b.values, 0.0)[ok]
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - butcher_partial_sum(QUAD, 0.2, 3)[0]) <= 5 * se


def test_breakdown_partitions_the_mean(quad_batch):
    parts = shape_breakdown(quad_batch)
    total = sum(v for v, _ in parts.values())
    v = quad_batch.values[quad_batch.ok]
    assert total == pytest.approx(math.fsum(v) / v.size, rel=1e-14)
    assert sum(c for _, c in parts.values()) == int(quad_batch.ok.sum())
    # the root survives with probability e^{-t}
    y0_share = parts["y0"][1] / quad_batch.values.size
    assert abs(y0_share - math.exp(-0.2)) <= 4 * math.sqrt(math.exp(-0.2) * (1 - math.exp(-0.2)) / 1e6)


def test_canonical_only_matches_fewer_shapes(quad_batch):
    b = ButcherTree.parse("[[[]][]]")
    full = shape_conditioned_estimate(QUAD, AUT1, 0, 0.2, 0, None, b, batch=quad_batch)
    canon = shape_conditioned_estimate(QUAD, AUT1, 0, 0.2, 0, None, b, canonical_only=True, batch=quad_batch)
    assert canon.matches < full.matches
    for small in (LEAF, path(2), CHERRY, path(3)):
        a = shape_conditioned_estimate(QUAD, AUT1, 0, 0.2, 0, None, small, batch=quad_batch)
        c = shape_conditioned_estimate(QUAD, AUT1, 0, 0.2, 0, None, small, canonical_only=True, batch=quad_batch)
        assert a.matches == c.matches
