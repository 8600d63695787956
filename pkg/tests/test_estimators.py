import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from orrw import _prf
from orrw.engine import ModelParams, TimeStream, Trajectory, simulate
from orrw.estimators import (EscapeConfig, NotNowhereHeavy, additivity_defect, capvol_ratio,
                             demon_escape_ratio, displacement_tail, escape_indicator,
                             escape_indicators, escape_outcomes, estimate_capacity, gaussian_fit,
                             h1_bound, h1_histogram, nowhere_heavy, phase_scan, replica_paths,
                             return_probability, variance_curve, wilson)
from orrw.lattice import Box
from orrw.oracles import enumerate_orrw, exact_escape, exact_moments, srw_green


def _wilson_closed_form(k, n, z):
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return mid - half, mid + half


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (50, 100), (999, 1000)])
def test_wilson_matches_closed_form(k, n):
    assert wilson(k, n) == pytest.approx(_wilson_closed_form(k, n, 3.0), abs=1e-9)


# ---------------------------------------------------------------- escape


def test_escape_indicator_examples():
    p = ModelParams(2, 0.0)
    cfg = EscapeConfig((0, 0), 1, 5, frozenset({(1, 0)}))
    hit = Trajectory(p, np.array([(0, 0), (1, 0)] + [(0, 0)] * 49))
    assert not escape_indicator(hit, cfg.with_A({(1, 0)}))
    stay = Trajectory(p, np.array([(3 + (i % 2), 0) for i in range(51)]))
    assert escape_indicator(stay, cfg.with_A(()))
    assert not escape_indicator(stay, cfg.with_A({(4, 0)}))
    with pytest.raises(ValueError):
        escape_indicator(Trajectory(p, np.zeros((3, 2))), cfg)


@given(st.integers(0, 2 ** 32), st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)),
                                          max_size=12))
def test_escape_monotone_in_A(seed, pts):
    p = ModelParams(2, 1.0)
    cfg = EscapeConfig((0, 0), 1, 2)
    paths = replica_paths(p, (0, 0), cfg.horizon, seed, 200)
    A_big = frozenset(pts)
    A_small = frozenset(pts[: len(pts) // 2])
    big = escape_indicators(paths, cfg.with_A(A_big))
    small = escape_indicators(paths, cfg.with_A(A_small))
    assert np.all(~big | small)


def test_escape_routes_agree():
    """Early-exit kernel, vectorised path filter and per-trajectory indicator."""
    p = ModelParams(2, 1.0)
    cfg = EscapeConfig((0, 0), 1, 3, frozenset({(0, 0), (1, 0), (0, 2)}))
    chain = [{(0, 0)}, {(0, 0), (1, 0)}, cfg.A]
    k = escape_outcomes(p, (0, 0), cfg, chain, 400, 11)
    paths = replica_paths(p, (0, 0), cfg.horizon, 11, 400)
    for j, A in enumerate(chain):
        assert np.array_equal(k[:, j], escape_indicators(paths, cfg.with_A(A)))
    for i in range(0, 400, 37):
        s = _prf.derive_replica_seed(11, i)
        t = simulate(p, (0, 0), cfg.horizon, TimeStream(s))
        assert escape_indicator(t, cfg) == k[i, 2]


def test_escape_outcomes_rejects_unnested_chain():
    cfg = EscapeConfig((0, 0), 1, 2)
    with pytest.raises(ValueError):
        escape_outcomes(ModelParams(2, 1), (0, 0), cfg, [{(1, 0)}, {(0, 1)}], 10, 0)


def test_capacity_trivial_cases():
    p = ModelParams(2, 1.0)
    assert estimate_capacity([], (0, 0), 1, 2, p, 100, 0).total == 0.0
    assert estimate_capacity([(9, 9)], (0, 0), 1, 2, p, 100, 0).total == 0.0


@given(st.integers(0, 2 ** 20), st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2)),
                                          min_size=1, max_size=6))
def test_capacity_bounds(seed, A):
    p = ModelParams(2, 0.5)
    est = estimate_capacity(A, (0, 0), 1, 2, p, 200, seed)
    inside = sum(1 for z in set(A) if z in Box((0, 0), 2))
    assert 0 <= est.total <= inside
    assert all(0 <= v[0] <= 1 for v in est.points.values())


def test_capacity_tiny_instance_matches_oracle():
    p = ModelParams(2, 1.0)
    cfg = EscapeConfig((0, 0), 1, 2, frozenset({(0, 0)}))
    exact = exact_escape((0, 0), cfg, p)
    assert exact == pytest.approx(0.20120238730158735, abs=1e-14)
    est = estimate_capacity([(0, 0)], (0, 0), 1, 2, p, 10 ** 5, 2024)
    assert abs(est.total - exact) <= 3 * est.stderr_total


def test_stderr_shrinks_like_sqrt_n():
    p = ModelParams(2, 1.0)
    a = estimate_capacity([(0, 0)], (0, 0), 1, 2, p, 20000, 5).stderr_total
    b = estimate_capacity([(0, 0)], (0, 0), 1, 2, p, 40000, 5).stderr_total
    assert a / b == pytest.approx(math.sqrt(2), rel=0.1)


def test_nowhere_heavy():
    assert nowhere_heavy([], 5, 1e-5, 3.5)
    assert nowhere_heavy([(0, 0)], 5, 1e-5, 3.5)
    packed = [(x, y) for x in range(-2, 3) for y in range(-2, 3)][:13]   # 13 > 2^3.5
    rep = nowhere_heavy(packed, 5, 1e-5, 3.5)
    assert not rep and rep.witness.radius == 2 and rep.count == 13
    assert nowhere_heavy(packed[:11], 5, 1e-5, 3.5)


def test_capvol_ratio():
    p = ModelParams(2, 1.0)
    r = capvol_ratio([(0, 0)], (0, 0), 1, 2, p, 5000, 1)
    assert r.volume == 1 and r.denominator == 1.0
    assert r.ratio == pytest.approx(r.capacity.total, abs=1e-15) and r.ratio > 0
    full = list(Box((0, 0), 2))
    with pytest.raises(NotNowhereHeavy):
        capvol_ratio(full, (0, 0), 2, 2, ModelParams(2, 1.0, kappa=1.5), 10, 0)


# ---------------------------------------------------------------- variance and friends


def test_variance_small_t_against_exact():
    for d, a in [(1, 1.0), (2, 0.5), (3, 2.0)]:
        p = ModelParams(d, a)
        c = variance_curve(p, [1, 2], 40000, 3)
        v1, se1, _ = c.entries[1]
        v2, se2, _ = c.entries[2]
        assert abs(v1 - 1 / d) <= 3 * se1
        assert abs(v2 - exact_moments(p, 2)) <= 3 * se2
    assert exact_moments(ModelParams(1, 1.0), 2) == pytest.approx(4 / 3, abs=1e-15)


def test_variance_coordinate_symmetry_and_sigma():
    p = ModelParams(3, 0.3)
    c1 = variance_curve(p, [50, 200], 20000, 8, coord=0)
    c2 = variance_curve(p, [50, 200], 20000, 8, coord=1)
    for t in (50, 200):
        (v, se, _), (w, sw, _) = c1.entries[t], c2.entries[t]
        assert abs(v - w) <= 3 * math.hypot(se, sw)
        assert v >= 0
    assert c1.sigma_hat == pytest.approx(math.sqrt(c1.entries[200][0] / 200))


def test_additivity_defect():
    a0 = additivity_defect(ModelParams(2, 0.0), 50, 50, 20000, 1)
    assert a0.value <= 3 * a0.stderr
    p = ModelParams(2, 1.0)
    d1 = additivity_defect(p, 1, 1, 40000, 2)
    assert abs(d1.value - abs(exact_moments(p, 2) - 2 / 2)) <= 3 * d1.stderr
    with pytest.raises(ValueError):
        additivity_defect(p, 3, 1, 10, 0)


def test_displacement_tail_limits():
    p = ModelParams(2, 1.0)
    assert displacement_tail(p, 20, 500, 0, exponent=1.5).p == 0.0
    assert displacement_tail(p, 20, 500, 0, exponent=0.0).p == 1.0
    est = displacement_tail(p, 400, 2000, 0)
    assert est.lo <= est.p <= est.hi


def test_h1_speed_limit_and_parity():
    rep = h1_histogram(ModelParams(2, 1.0), 5, 5000, 4)
    for v in rep.counts:
        assert sum(map(abs, v)) <= 5 and sum(v) % 2 == 1
    assert rep.frequency((9, 9)) == 0
    assert h1_bound((0, 0), 4, 2, 0.01) == pytest.approx(4 ** (-1 + 0.01))


def test_h1_frequencies_match_enumeration():
    p = ModelParams(2, 1.0)
    n = 100000
    rep = h1_histogram(p, 6, n, 6)
    exact = enumerate_orrw(p, 6).support
    keys = sorted(exact)
    obs = np.array([rep.counts.get(k, 0) for k in keys], dtype=float)
    exp = np.array([exact[k] for k in keys]) * n
    assert obs.sum() == n
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_gaussian_fit_srw():
    fit = gaussian_fit(ModelParams(2, 0.0), 10000, 10000, 12)
    assert fit.ks <= 0.02
    assert abs(fit.sigma_hat - 1 / math.sqrt(2)) <= 3 * fit.sigma_stderr
    assert fit.cov.shape == (2, 2)


def test_phase_scan_srw_slopes():
    fits = phase_scan(1, [0.0], [100, 300, 1000, 3000, 10000], 1000, 3)
    assert abs(fits[0].range_slope - 0.5) <= 0.05
    fits = phase_scan(3, [0.0], [100, 300, 1000, 3000, 10000], 500, 3)
    assert abs(fits[0].radius_slope - 0.5) <= 0.05
    with pytest.raises(ValueError):
        phase_scan(2, [0.0], [10], 10, 0)


def test_return_probability():
    r = return_probability(ModelParams(1, 0.0), [0, 1], 1000, 5000, 1)
    assert r.entries[0][0] == 1.0
    assert r.entries[1][0] > 0.95
    g = srw_green(6, 4.0)
    srw = return_probability(ModelParams(6, 0.0), [1, 10], 1000, 20000, 1)
    p1, lo, hi = srw.entries[1]
    assert lo <= g.return_probability() <= hi
    orrw = return_probability(ModelParams(6, 0.1), [1, 10, 100], 1000, 20000, 1)
    ps = [orrw.entries[t][0] for t in (1, 10, 100)]
    assert ps[0] < 0.2 and ps[0] >= ps[1] >= ps[2]


def test_demon_escape_ratio_reports_both_sides():
    p = ModelParams(2, 1.0)
    res = demon_escape_ratio(p, 2, 1, (3, 0), "nearest-to-exit", 500, 300, 4)
    assert res.time is not None and res.z in Box((3, 0), 2)
    assert 0 <= res.p_virgin <= 1 and 0 <= res.p_demon <= 1
    assert set(res.to_json()) >= {"p_virgin", "p_demon", "ratio"}
