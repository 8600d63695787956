import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orrw import _prf
from orrw._backend import kernel_errstate
from orrw.engine import Envelopes, TimeStream

SEEDS = st.integers(0, 2 ** 64 - 1)


@given(SEEDS, st.integers(0, 10 ** 6))
def test_replica_seed_scalar_matches_vectorised(seed, i):
    assert _prf.derive_replica_seed(seed, i) == int(_prf.derive_replica_seeds(seed, [i])[0])


def test_replica_seeds_distinct_over_a_million_indices():
    s = _prf.derive_replica_seeds(12345, np.arange(10 ** 6))
    assert np.unique(s).size == 10 ** 6
    assert _prf.derive_replica_seed(12345, 17) == _prf.derive_replica_seed(12345, 17)
    with pytest.raises(ValueError):
        _prf.derive_replica_seed(0, -1)


def test_replica_streams_uncorrelated():
    n = 10 ** 5
    a, b = _prf.derive_replica_seeds(3, [0, 1])
    ua = _prf.stream_uniforms(int(a), 1, n) < 0.5
    ub = _prf.stream_uniforms(int(b), 1, n) < 0.5
    assert abs(np.corrcoef(ua, ub)[0, 1]) < 0.01


@given(SEEDS, st.integers(0, 10 ** 9))
def test_time_stream_scalar_matches_vectorised(seed, t):
    assert TimeStream(seed).at(t) == _prf.stream_uniforms(seed, t, 1)[0]


def test_uniforms_are_uniform():
    from scipy import stats
    u = _prf.stream_uniforms(99, 1, 200_000)
    assert u.min() >= 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-4


def test_envelopes_depend_on_vertex_and_count():
    env = Envelopes(5)
    vals = {env.at((x, y), n) for x in range(-3, 4) for y in range(-3, 4) for n in range(1, 4)}
    assert len(vals) == 7 * 7 * 3
    assert env.at((1, 2), 3) == Envelopes(5).at((1, 2), 3)
    assert env.at((-1, 0), 1) != env.at((1, 0), 1)


def test_negative_seed_wraps():
    assert int(_prf.as_seed(-1)) == 2 ** 64 - 1
    with kernel_errstate():
        assert _prf.mix64(np.uint64(0)) == np.uint64(0)
