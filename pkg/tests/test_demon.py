import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orrw.demon import (DemonStrategy, EnterEdge, EnterVertex, FixedEdge, GreedyDense,
                        IllegalDecision, UniformRandomEdge, builtin_strategies, decision_from_json,
                        dump_decision_log, inbox_steps_stop, make_strategy,
                        restriction_demon_replay, run_demon_walk, step_count_stop)
from orrw.engine import EdgeEnvironment, Envelopes, ModelParams, TimeStream, simulate, transition_probs
from orrw.lattice import Box, Edge, PathSeq, adjacent, boundary_edges, neighbors, restrict


class CenterOnce(DemonStrategy):
    def decide(self, history):
        return EnterVertex(self.box.center) if not history else None


class Scripted(DemonStrategy):
    def __init__(self, box, decisions):
        super().__init__(box)
        self.decisions = list(decisions)

    def decide(self, history):
        return self.decisions.pop(0) if self.decisions else None


def test_zero_steps_from_center():
    box = Box((0, 0), 2)
    t = run_demon_walk(CenterOnce(box), box, ModelParams(2, 1.0), step_count_stop(0), TimeStream(1))
    assert t.points == [(0, 0)]


def test_fixed_edge_reentry_mechanics():
    box = Box((0,), 1)
    strat = FixedEdge(box, edge=Edge((1,), (2,)))
    for seed in range(20):
        t = run_demon_walk(strat, box, ModelParams(1, 1.0), step_count_stop(200), TimeStream(seed))
        pts = [p[0] for p in t.points]
        assert pts[:2] == [2, 1]
        for i, x in enumerate(pts[:-2]):
            if abs(x) == 2 and i >= 1 and abs(pts[i - 1]) == 1:
                assert pts[i + 1:i + 3] == [2, 1]


def test_illegal_decisions_raise():
    box = Box((0, 0), 1)
    p = ModelParams(2, 1.0)
    with pytest.raises(IllegalDecision):
        run_demon_walk(Scripted(box, [EnterVertex((5, 5))]), box, p, step_count_stop(5), TimeStream(0))
    with pytest.raises(IllegalDecision):
        run_demon_walk(Scripted(box, [EnterEdge(Edge((0, 0), (1, 0)))]), box, p,
                       step_count_stop(5), TimeStream(0))
    # a vertex answer must neighbour the current outside position
    bad = Scripted(box, [EnterEdge(Edge((1, 0), (2, 0))), EnterVertex((-1, -1))])
    with pytest.raises(IllegalDecision):
        run_demon_walk(bad, box, p, step_count_stop(50), TimeStream(0))


def test_never_consulted_when_walk_stays_inside():
    box = Box((0, 0), 50)
    t = run_demon_walk(CenterOnce(box), box, ModelParams(2, 1.0), step_count_stop(100), TimeStream(2))
    assert t.length == 100


def test_catalog_and_factory():
    names = set(builtin_strategies())
    assert names == {"fixed-edge", "uniform-edge", "nearest-to-exit", "greedy-dense"}
    box = Box((0, 0), 2)
    s = make_strategy("fixed-edge", box, 0, {"edge": [[2, 0], [3, 0]]})
    assert s.decide(((2, 0), (3, 0))) == EnterEdge(Edge((2, 0), (3, 0)))
    with pytest.raises(ValueError):
        make_strategy("nope", box)


def test_uniform_edge_frequencies():
    box = Box((0, 0), 1)
    edges = sorted(boundary_edges(box))
    counts = dict.fromkeys(edges, 0)
    n = 0
    for seed in range(40):
        s = UniformRandomEdge(box, seed)
        for h in range(300):
            counts[s.decide((None,) * h).edge] += 1
            n += 1
    p = 1 / len(edges)
    se = np.sqrt(p * (1 - p) / n)
    assert all(abs(c / n - p) <= 3 * se for c in counts.values())


def test_greedy_dense_rule():
    box = Box((0, 0), 1)
    g = GreedyDense(box)
    assert g.decide(()) == EnterVertex((0, 0))
    hist = ((0, 0), (1, 0), (1, 1), (1, 0), (2, 0))
    assert g.decide(hist) == EnterEdge(Edge((1, 0), (2, 0)))
    # densest vertex is the center; its four nearest boundary edges tie and the smallest wins
    hist = ((0, 1), (0, 0), (0, -1), (0, 0), (0, 1), (0, 0), (0, -1), (-1, -1), (-2, -1))
    assert g.decide(hist) == EnterEdge(Edge((-2, 0), (-1, 0)))
    # tie between two vertices visited twice: the smaller one, (0,-1), is the target
    hist = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (1, -1), (0, -1), (0, 0), (0, 1), (0, 2))
    assert g.decide(hist) == EnterEdge(Edge((0, -2), (0, -1)))


@given(st.sampled_from(sorted(builtin_strategies())), st.integers(0, 2 ** 32),
       st.integers(0, 2), st.floats(0, 3))
def test_demon_walks_are_teleporters(name, seed, r, a):
    box = Box((0, 0), r)
    log = []
    t = run_demon_walk(make_strategy(name, box, seed), box, ModelParams(2, a),
                       step_count_stop(120), TimeStream(seed), decision_log=log)
    PathSeq(tuple(t.points), box)                     # validates teleporter rules
    assert all(decision_from_json(rec["decision"]) is not None for rec in log)
    lines = dump_decision_log(log).splitlines()
    assert [json.loads(x) for x in lines] == log


def test_inbox_transitions_follow_the_law():
    """In-box steps of a demon walk are distributed by the transition law on
    the teleporter's environment."""
    box = Box((0, 0), 2)
    p = ModelParams(2, 1.0)
    obs = np.zeros(4)
    expect = np.zeros(4)
    var = np.zeros(4)
    for seed in range(300):
        t = run_demon_walk(UniformRandomEdge(box, seed), box, p, inbox_steps_stop(box, 50),
                           TimeStream(seed))
        pts = t.points
        env = EdgeEnvironment()
        for u, v in zip(pts, pts[1:]):
            if u in box:
                # conditional law from the teleporter environment so far
                probs = transition_probs(env, p.a, u)
                reinforced = np.array([Edge(u, w) in env for w in neighbors(u)])
                k = int(Edge(u, v) in env)
                obs[0] += k
                expect[0] += probs[reinforced].sum()
                var[0] += probs[reinforced].sum() * (1 - probs[reinforced].sum())
            if adjacent(u, v) and (u in box or v in box):
                env.add(Edge(u, v))
    z = (obs[0] - expect[0]) / np.sqrt(var[0])
    assert abs(z) < 4


def test_replay_equality_random_seeds():
    p = ModelParams(2, 1.0)
    for seed in range(150):
        r, dm = restriction_demon_replay(seed, Box((0, 0), 3), 200, p)
        assert r.same_path(dm), seed


def test_replay_off_center_box_and_envelope_law():
    p = ModelParams(2, 2.0)
    for seed in range(60):
        r, dm = restriction_demon_replay(seed, Box((4, -1), 2), 150, p)
        assert r.same_path(dm), seed


def test_replay_trivial_cases():
    p = ModelParams(2, 1.0)
    r, dm = restriction_demon_replay(5, Box((0, 0), 100), 80, p)
    W = simulate(p, (0, 0), 80, Envelopes(5))
    assert r.same_path(W) and dm.same_path(W)
    r, dm = restriction_demon_replay(5, Box((0, 0), 2), 10, p, start=(40, 40))
    assert r.length == -1 and dm.length == -1


def test_replay_matches_restriction_function():
    p = ModelParams(3, 0.5)
    box = Box((0, 0, 0), 2)
    r, _ = restriction_demon_replay(9, box, 300, p)
    W = simulate(p, (0, 0, 0), 300, Envelopes(9))
    assert r.points == list(restrict(W.path, box).vertices)
