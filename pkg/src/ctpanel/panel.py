"""Slice grid, behavior panel data model, assembly, validation and JSONL I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from . import SCHEMA_VERSION
from .errors import DataError
from .session import VERBAL_CHANNELS

AFFECT_CHANNELS = ("joy", "delight", "surprise", "confusion", "flow")
HEAD_CHANNELS = ("head_nod", "head_turn", "head_incline")
TURN_CHANNELS = ("turn_indegree", "turn_outdegree")

# Canonical channel order. Fixed; panel files and fit configs refer to these names.
CHANNELS = VERBAL_CHANNELS + AFFECT_CHANNELS + HEAD_CHANNELS + TURN_CHANNELS
CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNELS)}
# Channels that default to 0 when absent; the rest default to missing.
COUNT_CHANNELS = frozenset(VERBAL_CHANNELS + AFFECT_CHANNELS)

assert len(CHANNELS) == 24


@dataclass(frozen=True)
class Slice:
    index: int
    start: float
    end: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


def build_slice_grid(session, slice_len: float = 10.0) -> list[Slice]:
    """Partition ``[0, session_length)`` into consecutive slices of ``slice_len`` seconds.

    ``session`` is a SessionLog or a plain session length. A trailing partial
    slice is kept when it spans at least half of ``slice_len``.
    """
    length = float(getattr(session, "session_length", session))
    if not slice_len > 0:
        raise ValueError(f"slice_len must be positive, got {slice_len}")
    if not length > 0:
        raise DataError("empty session (session_length <= 0)")
    n_full = int(math.floor(length / slice_len + 1e-9))
    grid = [Slice(i, i * slice_len, (i + 1) * slice_len) for i in range(n_full)]
    tail = length - n_full * slice_len
    if tail > 1e-9 * slice_len and tail >= 0.5 * slice_len:
        grid.append(Slice(n_full, n_full * slice_len, length))
    if not grid:
        raise DataError(f"session of {length}s is shorter than half a {slice_len}s slice")
    return grid


@dataclass(frozen=True)
class SliceRecord:
    """One (member, slice) row. ``values`` follows CHANNELS; None marks missing."""

    slice_index: int
    start: float
    end: float
    time: float
    values: tuple
    curiosity: Optional[float] = None

    def __post_init__(self):
        if len(self.values) != len(CHANNELS):
            raise DataError(f"channel vector has length {len(self.values)}, expected {len(CHANNELS)}")

    def channel(self, name: str) -> Optional[float]:
        return self.values[CHANNEL_INDEX[name]]


@dataclass
class BehaviorPanel:
    group_id: str
    members: dict[str, list[SliceRecord]] = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return sum(len(r) for r in self.members.values())

    def series(self, member: str, channels: Iterable[str] = CHANNELS):
        """Return ``(times, X, y)`` for one member with NaN for missing entries."""
        recs = self.members[member]
        idx = [CHANNEL_INDEX[c] for c in channels]
        times = np.array([r.time for r in recs], dtype=float)
        X = np.array([[_nan(r.values[i]) for i in idx] for r in recs], dtype=float).reshape(len(recs), len(idx))
        y = np.array([_nan(r.curiosity) for r in recs], dtype=float)
        return times, X, y


def _nan(v):
    return np.nan if v is None else float(v)


FeatureEntry = tuple  # (member, slice_index, channel, value)


def assemble_panel(
    session,
    grid: list[Slice],
    features: Iterable[FeatureEntry] = (),
    curiosity: Mapping[tuple, Optional[float]] | None = None,
) -> BehaviorPanel:
    """Align per-slice channel values into one record per (member, slice).

    ``features`` yields ``(member, slice_index, channel, value)``; ``value`` may be
    None for an explicitly missing measurement. ``curiosity`` maps
    ``(member, slice_index)`` to a label.
    """
    members = list(session.members)
    known = set(members)
    slices = {s.index: s for s in grid}
    table: dict[tuple, Optional[float]] = {}
    for member, slice_index, channel, value in features:
        if member not in known:
            raise DataError(f"unknown member {member!r}")
        if slice_index not in slices:
            raise DataError(f"slice {slice_index} outside the grid")
        if channel not in CHANNEL_INDEX:
            raise DataError(f"unknown channel {channel!r}")
        key = (member, slice_index, channel)
        if key in table:
            raise DataError(f"duplicate entry for {key}")
        table[key] = None if value is None else float(value)

    curiosity = dict(curiosity or {})
    for member, slice_index in curiosity:
        if member not in known:
            raise DataError(f"curiosity label for unknown member {member!r}")
        if slice_index not in slices:
            raise DataError(f"curiosity label for slice {slice_index} outside the grid")

    panel = BehaviorPanel(group_id=str(session.group_id))
    for member in members:
        records = []
        for s in grid:
            values = tuple(
                table.get((member, s.index, ch), 0.0 if ch in COUNT_CHANNELS else None)
                for ch in CHANNELS
            )
            label = curiosity.get((member, s.index))
            records.append(SliceRecord(s.index, s.start, s.end, s.midpoint, values,
                                       None if label is None else float(label)))
        panel.members[member] = records
    return panel


@dataclass
class ValidationReport:
    violations: list[str]
    missing_rates: dict[str, float]
    slice_counts: dict[str, int]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_panel(panel: BehaviorPanel) -> ValidationReport:
    violations = []
    missing = {name: 0 for name in CHANNELS + ("curiosity",)}
    total = 0
    counts = {}
    for member, recs in panel.members.items():
        counts[member] = len(recs)
        for prev, cur in zip(recs, recs[1:]):
            if not cur.time > prev.time:
                violations.append(f"non-monotone time for member {member!r} at slice {cur.slice_index}")
        for r in recs:
            total += 1
            if len(r.values) != len(CHANNELS):
                violations.append(f"member {member!r} slice {r.slice_index}: channel vector length {len(r.values)}")
                continue
            for name, v in zip(CHANNELS, r.values):
                if v is None or (isinstance(v, float) and math.isnan(v)):
                    missing[name] += 1
                elif name in HEAD_CHANNELS and v < 0:
                    violations.append(f"member {member!r} slice {r.slice_index}: negative variance in {name}")
                elif name in COUNT_CHANNELS and v < 0:
                    violations.append(f"member {member!r} slice {r.slice_index}: negative count in {name}")
            if r.curiosity is None:
                missing["curiosity"] += 1
    rates = {k: (v / total if total else 0.0) for k, v in missing.items()}
    return ValidationReport(violations, rates, counts)


def panel_records(panel: BehaviorPanel) -> Iterable[dict]:
    for member, recs in panel.members.items():
        for r in recs:
            yield {
                "schema": SCHEMA_VERSION,
                "group_id": panel.group_id,
                "member": member,
                "slice": r.slice_index,
                "start": r.start,
                "end": r.end,
                "time": r.time,
                "channels": dict(zip(CHANNELS, r.values)),
                "curiosity": r.curiosity,
            }


def dumps_panel(panel: BehaviorPanel) -> str:
    return "".join(json.dumps(rec, allow_nan=False) + "\n" for rec in panel_records(panel))


def write_panel(panel: BehaviorPanel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_panel(panel))


def read_panels(path) -> list[BehaviorPanel]:
    """Read a panel JSONL file; one file may carry several groups."""
    panels: dict[str, BehaviorPanel] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                chans = obj["channels"]
                values = tuple(None if chans.get(c) is None else float(chans[c]) for c in CHANNELS)
                rec = SliceRecord(int(obj["slice"]), float(obj["start"]), float(obj["end"]),
                                  float(obj["time"]), values,
                                  None if obj.get("curiosity") is None else float(obj["curiosity"]))
                group = str(obj["group_id"])
                member = str(obj["member"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed panel record ({exc!r})") from exc
            panel = panels.setdefault(group, BehaviorPanel(group))
            panel.members.setdefault(member, []).append(rec)
    return list(panels.values())


def read_panel(path) -> BehaviorPanel:
    panels = read_panels(path)
    if len(panels) != 1:
        raise DataError(f"{path}: expected one group, found {len(panels)}")
    return panels[0]
