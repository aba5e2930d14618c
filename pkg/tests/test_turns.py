import pytest
from hypothesis import given, strategies as st

from ctpanel.panel import build_slice_grid
from ctpanel.session import TurnEvent
from ctpanel.turns import (
    TurnMetricConfig,
    build_turn_graph,
    slice_turn_metrics,
    turn_indegree,
    turn_outdegree,
)

from oracles import power_metric


def seq(*spec):
    """Back-to-back turns from ``(speaker, duration)`` pairs starting at 0."""
    t, out = 0.0, []
    for spk, dur in spec:
        out.append(TurnEvent(spk, t, t + dur))
        t += dur
    return out


def test_single_speaker_no_edges():
    g = build_turn_graph([TurnEvent("A", 0, 10)], (0, 10))
    assert g.nodes == ["A"] and g.edges == {}
    assert turn_indegree("A", g) is None and turn_outdegree("A", g) is None


def test_adjacent_pair():
    g = build_turn_graph([TurnEvent("A", 0, 4), TurnEvent("B", 5, 8)], (0, 10))
    w = g.edges[("B", "A")]
    assert (w.count, w.latency_sum, w.floor_time_sum) == (1, 1.0, 4.0)
    assert g.floor_time == {"A": 4.0, "B": 3.0}


def test_overlap_latency_clamped():
    g = build_turn_graph([TurnEvent("A", 0, 5), TurnEvent("B", 3, 8)], (0, 10))
    assert g.edges[("B", "A")].latency_sum == 0.0


def test_same_speaker_runs_merge():
    g = build_turn_graph([TurnEvent("A", 0, 2), TurnEvent("A", 3, 5), TurnEvent("B", 6, 7)], (0, 10))
    assert ("A", "A") not in g.edges
    assert g.edges[("B", "A")].floor_time_sum == 4.0


def test_turns_clipped_to_window():
    g = build_turn_graph([TurnEvent("A", 5, 15), TurnEvent("B", 15, 25)], (10, 20))
    assert g.floor_time == {"A": 5.0, "B": 5.0}
    assert g.edges[("B", "A")].floor_time_sum == 5.0


def test_empty_window():
    g = build_turn_graph([TurnEvent("A", 0, 5)], (10, 20))
    assert g.nodes == [] and g.edges == {}


def test_indegree_activity_four_silence_sixteen():
    turns = seq(("A", 4), ("X", 1), ("B", 4), ("X", 1), ("C", 4), ("X", 1), ("D", 4), ("X", 1))
    g = build_turn_graph(turns, (0, 100))
    assert turn_indegree("X", g) == pytest.approx(2.0, abs=1e-12)


def test_outdegree_equality_four_talk_nine():
    turns = seq(("Y", 2.25), ("A", 1), ("Y", 2.25), ("B", 1), ("Y", 2.25), ("C", 1), ("Y", 2.25), ("D", 1))
    g = build_turn_graph(turns, (0, 100))
    assert turn_outdegree("Y", g) == pytest.approx(6.0, abs=1e-12)


def test_unit_cases():
    g = build_turn_graph(seq(("A", 1), ("B", 1)), (0, 10))
    assert turn_indegree("B", g) == 1.0
    assert turn_outdegree("A", g) == 1.0


def test_member_who_never_spoke():
    g = build_turn_graph(seq(("A", 1), ("B", 1)), (0, 10))
    assert turn_outdegree("C", g) is None
    assert turn_indegree("C", g) is None


def test_zero_silence_floored():
    g = build_turn_graph(seq(("A", 1), ("B", 1)), (0, 10))
    cfg = TurnMetricConfig(silence="gap")
    assert turn_indegree("B", g, cfg) == pytest.approx(power_metric(1, 0.0, -0.5))
    assert turn_indegree("B", g, cfg) == pytest.approx(0.1 ** -0.5)


def test_gap_silence_mode():
    g = build_turn_graph([TurnEvent("A", 0, 4), TurnEvent("B", 8, 9)], (0, 10))
    assert turn_indegree("B", g, TurnMetricConfig(silence="gap")) == pytest.approx(4 ** -0.5)
    assert turn_indegree("B", g) == pytest.approx(4 ** -0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        TurnMetricConfig(epsilon=0)
    with pytest.raises(ValueError):
        TurnMetricConfig(silence="pause")


@given(st.integers(2, 6), st.integers(1, 5), st.floats(0.2, 5.0), st.floats(0.0, 1.0))
def test_round_robin_symmetry(n, cycles, length, gap):
    members = [f"m{i}" for i in range(n)]
    order = members * cycles + members[:1]
    turns, t = [], 0.0
    for spk in order:
        turns.append(TurnEvent(spk, t, t + length))
        t += length + gap
    g = build_turn_graph(turns, (0.0, t + 1))
    ins = [turn_indegree(m, g) for m in members]
    outs = [turn_outdegree(m, g) for m in members]
    assert ins == pytest.approx([ins[0]] * n, rel=1e-12)
    assert outs == pytest.approx([outs[0]] * n, rel=1e-12)


@given(st.lists(st.tuples(st.sampled_from("ABCD"), st.floats(0.1, 5.0), st.floats(0.0, 2.0)), max_size=15))
def test_relabeling_invariance(spec):
    turns, t = [], 0.0
    for spk, dur, gap in spec:
        turns.append(TurnEvent(spk, t, t + dur))
        t += dur + gap
    rename = {"A": "w", "B": "x", "C": "y", "D": "z"}
    g1 = build_turn_graph(turns, (0.0, t + 1))
    g2 = build_turn_graph([TurnEvent(rename[x.speaker], x.start, x.end) for x in turns], (0.0, t + 1))
    for m in "ABCD":
        assert turn_indegree(m, g1) == turn_indegree(rename[m], g2)
        assert turn_outdegree(m, g1) == turn_outdegree(rename[m], g2)


def responder_graph(activity, silence):
    """X answers ``activity`` distinct members who together held the floor ``silence`` seconds."""
    spec = []
    for i in range(activity):
        spec += [(f"p{i}", silence / activity), ("X", 1.0)]
    return build_turn_graph(seq(*spec), (0.0, silence + activity + 1))


@given(st.integers(1, 12), st.floats(0.5, 100.0), st.floats(1.1, 3.0))
def test_indegree_monotone(activity, silence, factor):
    base = turn_indegree("X", responder_graph(activity, silence))
    assert base == pytest.approx(power_metric(activity, silence, -0.5), rel=1e-9)
    assert turn_indegree("X", responder_graph(activity + 1, silence)) > base
    assert turn_indegree("X", responder_graph(activity, silence * factor)) < base


def test_slice_metrics_cover_grid():
    turns = seq(("A", 4), ("B", 8), ("A", 6), ("C", 2))
    grid = build_slice_grid(20.0)
    rows = list(slice_turn_metrics(turns, grid, ["A", "B", "C"]))
    assert len(rows) == 6
    # B's turn spans the slice boundary and responds to A only in slice 0
    by = {(m, i): (a, b) for m, i, a, b in rows}
    assert by[("B", 0)][0] == pytest.approx(1 ** 1.5 * 4 ** -0.5)
    assert by[("A", 1)][0] == pytest.approx(2 ** -0.5)
