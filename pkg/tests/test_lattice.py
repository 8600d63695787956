import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orrw.lattice import (Box, Edge, PathSeq, adjacent, boundary_edges, closure, in_closure,
                          neighbor_index, neighbors, restrict, restriction_times)


def test_neighbor_order():
    assert neighbors((0, 0)) == [(1, 0), (-1, 0), (0, 1), (0, -1)]
    assert neighbors((5,)) == [(6,), (4,)]
    assert neighbors((1, 1, 1)) == [(2, 1, 1), (0, 1, 1), (1, 2, 1), (1, 0, 1), (1, 1, 2), (1, 1, 0)]
    assert neighbor_index((0, 0), (0, -1)) == 3


def test_edge_is_canonical_and_validated():
    assert Edge((1, 0), (0, 0)) == Edge((0, 0), (1, 0))
    assert Edge((1, 0), (0, 0)).lo == (0, 0)
    assert Edge((0, 0), (0, 1)).axis == 1
    with pytest.raises(ValueError):
        Edge((0, 0), (1, 1))
    with pytest.raises(ValueError):
        Edge((0, 0), (0, 0))
    e = Edge((2, 3), (2, 4))
    assert Edge.from_json(e.to_json()) == e


def test_box_membership_and_json():
    b = Box((1, -1), 2)
    assert (3, 1) in b and (4, 0) not in b
    assert len(b) == 25 == len(list(b))
    assert Box.from_json(b.to_json()) == b
    assert b.to_json() == {"center": [1, -1], "radius": 2}


def test_boundary_edges_small_cases():
    assert boundary_edges(Box((0,), 1)) == {Edge((1,), (2,)), Edge((-1,), (-2,))}
    assert len(boundary_edges(Box((0, 0), 1))) == 12
    assert len(boundary_edges(Box((0, 0), 0))) == 4


@given(st.integers(1, 3), st.integers(0, 3))
def test_boundary_edge_count(d, r):
    edges = boundary_edges(Box((0,) * d, r))
    assert len(edges) == 2 * d * (2 * r + 1) ** (d - 1)
    box = Box((0,) * d, r)
    assert all((e.lo in box) != (e.hi in box) for e in edges)


def test_closure():
    assert closure(Box((0,), 1)) == {(-2,), (-1,), (0,), (1,), (2,)}
    assert len(closure(Box((0, 0), 0))) == 5
    assert len(closure(Box((0, 0), 1))) == 21
    assert not in_closure(Box((0, 0), 1), (2, 2))


def test_pathseq_validation():
    PathSeq(((0,), (1,), (2,)))
    with pytest.raises(ValueError):
        PathSeq(((0,), (2,)))
    box = Box((0,), 1)
    PathSeq(((0,), (1,), (2,), (-2,), (-1,)), box)        # teleport between outside vertices
    with pytest.raises(ValueError):
        PathSeq(((1,), (2,), (-2,), (2,)), box)          # three outside in a row
    with pytest.raises(ValueError):
        PathSeq(((1,), (3,)), box)                       # outside the closure
    with pytest.raises(ValueError):
        PathSeq(((0,), (-1,), (1,)), box)                # inside jump


def test_restriction_examples():
    box = Box((0,), 1)
    p = PathSeq(((0,), (1,), (0,), (-1,)))
    assert restrict(p, box).vertices == p.vertices
    p = PathSeq(tuple((x,) for x in (0, 1, 2, 1, 0)))
    assert restrict(p, box).vertices == tuple((x,) for x in (0, 1, 2, 1, 0))
    p = PathSeq(tuple((x,) for x in (0, 1, 2, 3, 2, 1, 0)))
    assert restrict(p, box).vertices == tuple((x,) for x in (0, 1, 2, 2, 1, 0))


def test_restriction_never_entering_is_empty():
    p = PathSeq(tuple((x,) for x in (5, 6, 7, 6)))
    r = restrict(p, Box((0,), 1))
    assert r.vertices == () and r.length == -1


def test_restriction_starting_outside():
    p = PathSeq(tuple((x,) for x in (4, 3, 2, 1, 0)))
    assert restriction_times(p.vertices, Box((0,), 1)) == [2, 3, 4]


def test_restrict_teleporter_needs_strictly_smaller_box():
    p = PathSeq(tuple((x,) for x in (0, 1, 2, 3)))
    t = restrict(p, Box((0,), 2))
    with pytest.raises(ValueError):
        restrict(t, Box((0,), 2))
    restrict(t, Box((0,), 1))


_STEPS = st.lists(st.integers(0, 3), min_size=0, max_size=80)


def _walk(steps, d=2):
    u = (0,) * d
    out = [u]
    for i in steps:
        u = neighbors(u)[i % (2 * d)]
        out.append(u)
    return PathSeq(tuple(out))


@given(_STEPS, st.integers(0, 3), st.integers(1, 3))
def test_restriction_is_idempotent(steps, r, extra):
    path = _walk(steps)
    inner, outer = Box((0, 0), r), Box((0, 0), r + extra)
    assert restrict(restrict(path, outer), inner).vertices == restrict(path, inner).vertices


@given(_STEPS, st.integers(0, 3), st.tuples(st.integers(-2, 2), st.integers(-2, 2)))
def test_restriction_is_a_valid_teleporter(steps, r, c):
    box = Box(c, r)
    t = restrict(_walk(steps), box)
    t.validate()
    out = [v not in box for v in t.vertices]
    assert not any(a and b and c for a, b, c in zip(out, out[1:], out[2:]))
    # every kept inside vertex step is an actual lattice step
    for u, v in zip(t.vertices, t.vertices[1:]):
        if u in box or v in box:
            assert adjacent(u, v)


def test_all_points_in_closure_are_adjacent_or_inside():
    box = Box((0, 0), 1)
    for p in itertools.product(range(-3, 4), repeat=2):
        expect = p in box or any(q in box for q in neighbors(p))
        assert in_closure(box, p) == expect
