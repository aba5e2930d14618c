"""Per-window turn-taking graph and the two weighted degree metrics.

Edges point from the responder to the speaker it responded to. For member i:

    indegree  = activity ** (1 - alpha_in)  * silence ** alpha_in
    outdegree = equality ** (1 - alpha_out) * talkativeness ** alpha_out

activity counts distinct members i responded to, silence is the floor time
those members held before handing over to i; equality counts distinct members
i yielded the floor to, talkativeness is i's floor time before those responses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .session import TurnEvent


@dataclass
class EdgeWeight:
    count: int = 0
    latency_sum: float = 0.0
    floor_time_sum: float = 0.0


@dataclass
class TurnGraph:
    window: tuple
    nodes: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)  # (responder, prior_speaker) -> EdgeWeight
    floor_time: dict = field(default_factory=dict)

    def out_edges(self, member):
        return {dst: w for (src, dst), w in self.edges.items() if src == member}

    def in_edges(self, member):
        return {src: w for (src, dst), w in self.edges.items() if dst == member}


@dataclass(frozen=True)
class TurnMetricConfig:
    alpha_in: float = -0.5
    alpha_out: float = 0.5
    epsilon: float = 0.1
    silence: str = "floor"  # "floor": floor time of the prior turn; "gap": inter-turn latency

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.silence not in ("floor", "gap"):
            raise ValueError(f"unknown silence mode {self.silence!r}")


def _clip(turns: Iterable[TurnEvent], start: float, end: float) -> list[tuple]:
    out = []
    for t in turns:
        s, e = max(t.start, start), min(t.end, end)
        if e > s:
            out.append((s, e, t.speaker))
    out.sort(key=lambda x: (x[0], x[1], x[2]))
    return out


def _merge_runs(clipped: list[tuple]) -> list[tuple]:
    """Merge consecutive turns by one speaker into (start, end, speaker, floor_time)."""
    merged = []
    for s, e, spk in clipped:
        if merged and merged[-1][2] == spk:
            ps, pe, _, floor = merged[-1]
            merged[-1] = (ps, max(pe, e), spk, floor + (e - s))
        else:
            merged.append((s, e, spk, e - s))
    return merged


def build_turn_graph(turns: Iterable[TurnEvent], window: tuple) -> TurnGraph:
    start, end = window
    if not end > start:
        raise ValueError(f"invalid window {window}")
    runs = _merge_runs(_clip(turns, start, end))
    graph = TurnGraph(window=(start, end))
    for s, e, spk, floor in runs:
        if spk not in graph.floor_time:
            graph.nodes.append(spk)
            graph.floor_time[spk] = 0.0
        graph.floor_time[spk] += floor
    for prev, cur in zip(runs, runs[1:]):
        key = (cur[2], prev[2])
        w = graph.edges.setdefault(key, EdgeWeight())
        w.count += 1
        w.latency_sum += max(0.0, cur[0] - prev[1])
        w.floor_time_sum += prev[3]
    return graph


def _power_product(count: int, amount: float, alpha: float, eps: float) -> Optional[float]:
    if count == 0:
        return None
    return float(count ** (1.0 - alpha) * max(amount, eps) ** alpha)


def turn_indegree(member, graph: TurnGraph, config: TurnMetricConfig = TurnMetricConfig()) -> Optional[float]:
    out = graph.out_edges(member)
    attr = "floor_time_sum" if config.silence == "floor" else "latency_sum"
    silence = sum(getattr(w, attr) for w in out.values())
    return _power_product(len(out), silence, config.alpha_in, config.epsilon)


def turn_outdegree(member, graph: TurnGraph, config: TurnMetricConfig = TurnMetricConfig()) -> Optional[float]:
    inc = graph.in_edges(member)
    talk = sum(w.floor_time_sum for w in inc.values())
    return _power_product(len(inc), talk, config.alpha_out, config.epsilon)


def slice_turn_metrics(turns: Sequence[TurnEvent], grid, members, config: TurnMetricConfig = TurnMetricConfig()):
    """Yield ``(member, slice_index, indegree, outdegree)`` for every member and slice."""
    turns = list(turns)
    for s in grid:
        graph = build_turn_graph(turns, (s.start, s.end))
        for m in members:
            yield m, s.index, turn_indegree(m, graph, config), turn_outdegree(m, graph, config)
