import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import comb

from orrw.engine import EdgeEnvironment, ModelParams
from orrw.estimators import EscapeConfig
from orrw.lattice import Edge, neighbors
from orrw.oracles import (BudgetExceeded, enumerate_orrw, enumerate_orrw_memo, exact_capacity,
                          exact_escape, exact_escape_memo, exact_exit_through_edge, exact_moments,
                          srw_green)


def test_one_step_uniform():
    for a in (0.0, 1.0, 9.0):
        dist = enumerate_orrw(ModelParams(3, a), 1)
        assert all(dist.prob(v) == pytest.approx(1 / 6) for v in neighbors((0, 0, 0)))


def test_two_steps_d1_a1():
    dist = enumerate_orrw(ModelParams(1, 1.0), 2)
    assert dist.prob((0,)) == pytest.approx(2 / 3, abs=1e-15)
    assert dist.prob((2,)) == pytest.approx(1 / 6, abs=1e-15)
    assert dist.prob((-2,)) == pytest.approx(1 / 6, abs=1e-15)


def test_a0_is_binomial():
    t = 8
    dist = enumerate_orrw(ModelParams(1, 0.0), t)
    for k in range(t + 1):
        assert dist.prob((2 * k - t,)) == pytest.approx(comb(t, k) / 2 ** t, abs=1e-15)


@given(st.integers(1, 3), st.integers(0, 5), st.floats(0, 5),
       st.lists(st.integers(0, 5), max_size=3))
def test_enumerators_agree(d, t, a, picks):
    if (2 * d) ** t > 5000:
        t = 3
    p = ModelParams(d, a)
    o = (0,) * d
    env0 = EdgeEnvironment(Edge(o, neighbors(o)[i % (2 * d)]) for i in picks)
    dfs = enumerate_orrw(p, t, env0=env0).support
    memo = enumerate_orrw_memo(p, t, env0=env0)
    assert set(dfs) == set(memo)
    assert all(abs(dfs[k] - memo[k]) < 1e-12 for k in dfs)
    assert abs(sum(dfs.values()) - 1) < 1e-9
    for v in dfs:
        assert sum(map(abs, v)) <= t and sum(v) % 2 == t % 2


def test_functional_expectation():
    p = ModelParams(2, 1.0)
    dist = enumerate_orrw(p, 4, functional=lambda path: len(set(path)))
    assert 1 < dist.expectation <= 5


def test_exact_moments():
    assert exact_moments(ModelParams(4, 3.0), 1) == pytest.approx(0.25)
    assert exact_moments(ModelParams(1, 1.0), 2) == pytest.approx(4 / 3)
    for d, t in [(1, 7), (2, 6), (3, 4)]:
        assert exact_moments(ModelParams(d, 0.0), t) == pytest.approx(t / d, abs=1e-12)


def test_budget_guard():
    with pytest.raises(BudgetExceeded):
        enumerate_orrw(ModelParams(3, 1.0), 11)
    with pytest.raises(BudgetExceeded):
        exact_escape((0, 0, 0), EscapeConfig((0, 0, 0), 1, 3), ModelParams(3, 1.0))


def test_escape_surrounded_is_zero():
    A = frozenset(neighbors((0, 0))) | {(0, 0)}
    cfg = EscapeConfig((0, 0), 1, 2, A)
    assert exact_escape((0, 0), cfg, ModelParams(2, 1.0)) == 0.0


def test_escape_short_horizon_closed_form():
    # R=1: horizon 2, the walk must sit in [-1,1] at times 1 and 2
    for a in (0.0, 0.5, 2.0):
        cfg = EscapeConfig((0,), 1, 1)
        assert exact_escape((0,), cfg, ModelParams(1, a)) == pytest.approx((1 + a) / (2 + a))


def test_escape_frozen_value_and_routes():
    p = ModelParams(2, 1.0)
    cfg = EscapeConfig((0, 0), 1, 2, frozenset({(0, 0)}))
    v = exact_escape((0, 0), cfg, p)
    assert v == pytest.approx(0.20120238730158735, abs=1e-14)
    assert exact_escape_memo((0, 0), cfg, p) == pytest.approx(v, abs=1e-14)
    cfg2 = cfg.with_A({(0, 0), (1, 0), (5, 5)})
    assert exact_capacity(cfg2, p) == pytest.approx(
        sum(exact_escape_memo(z, cfg2, p) for z in [(0, 0), (1, 0)]), abs=1e-13)


def test_green_basic_properties():
    g = srw_green(3, 6.0)
    assert g.residual <= 1e-10
    g0 = g.g0
    assert all(g(x) < g0 for x in map(tuple, g.points.tolist()) if any(x))
    for x in [(1, 2, 0), (3, 1, 1), (2, 2, 2)]:
        for perm in itertools.permutations(x):
            for signs in itertools.product((1, -1), repeat=3):
                y = tuple(s * c for s, c in zip(signs, perm))
                assert abs(g(y) - g(x)) <= 1e-9
    assert g((50, 0, 0)) == 0.0
    with pytest.raises(ValueError):
        srw_green(2, 5.0)


def test_green_self_convergence():
    g = [srw_green(3, R).g0 for R in (10, 20, 30)]
    assert g[0] < g[1] < g[2] < 1.5164         # below the infinite-lattice value
    ratio = (g[1] - g[0]) / (g[2] - g[1])
    # radius^-1 decay predicts (1/10 - 1/20) / (1/20 - 1/30) = 3
    assert 2.0 <= ratio <= 4.5


@pytest.mark.parametrize("L", [1.0, 2.0, 3.0, 5.5, 10.0])
def test_exit_d1_gamblers_ruin(L):
    res = exact_exit_through_edge(1, L)
    # step to +1 (prob 1/2), then reach floor(L)+1 before 0
    assert res.value == pytest.approx(1 / (2 * (math.floor(L) + 1)), abs=1e-10)
    assert res.residual <= 1e-10


def test_exit_guards_and_symmetry():
    with pytest.raises(ValueError):
        exact_exit_through_edge(3, 0.5)
    with pytest.raises(ValueError):
        exact_exit_through_edge(2, 3.0, Edge((0, 0), (1, 0)))
    a = exact_exit_through_edge(2, 4.0).value
    b = exact_exit_through_edge(2, 4.0, Edge((0, -4), (0, -5))).value
    assert a == pytest.approx(b, abs=1e-9)


def test_exit_d3_shape():
    vals = [exact_exit_through_edge(3, L).value * L ** 2 for L in (4, 8, 16)]
    assert max(vals) / min(vals) <= 3
    assert vals[0] == pytest.approx(0.01668, abs=5e-5)
