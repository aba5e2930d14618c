"""Raw session logs: event types and the on-disk session directory format.

A session directory holds::

    session.json   {"group_id": ..., "members": [...], "session_length": seconds}
    turns.csv      speaker,start,end
    frames.jsonl   one face frame per line (member, timestamp, au, confidence, pitch, yaw, roll)
    verbal.csv     slice,member,channel,count
    ratings.csv    slice,member,rater,score,hit_duration
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import DataError

AU_CODES = (1, 2, 4, 5, 6, 7, 12, 15, 23, 25, 26, 45)

VERBAL_CHANNELS = (
    "uncertainty",
    "argument",
    "justification",
    "suggestion",
    "agreement",
    "question_on_task",
    "question_social",
    "idea_verbalization",
    "sharing_findings",
    "hypothesis_generation",
    "task_sentiment_pos",
    "task_sentiment_neg",
    "evaluation_pos",
    "evaluation_neg",
)

SESSION_FILES = ("session.json", "turns.csv", "frames.jsonl", "verbal.csv", "ratings.csv")


@dataclass(frozen=True)
class TurnEvent:
    speaker: str
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise DataError(f"turn by {self.speaker!r} has end {self.end} <= start {self.start}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class FaceFrame:
    timestamp: float
    au_active: Mapping[int, bool]
    confidence: float = 1.0
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"frame confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class VerbalLabel:
    slice_index: int
    member: str
    channel: str
    count: int

    def __post_init__(self):
        if self.channel not in VERBAL_CHANNELS:
            raise DataError(f"unknown verbal channel {self.channel!r}")
        if self.count < 0:
            raise DataError(f"negative count for {self.channel!r}")


@dataclass(frozen=True)
class RaterScore:
    slice_index: int
    member: str
    rater_id: str
    score: int
    hit_duration: float

    def __post_init__(self):
        if self.score not in (0, 1, 2):
            raise DataError(f"rating {self.score!r} not in {{0, 1, 2}}")


@dataclass
class SessionLog:
    group_id: str
    members: list[str]
    session_length: float
    turns: list[TurnEvent] = field(default_factory=list)
    frames: dict[str, list[FaceFrame]] = field(default_factory=dict)
    verbal_labels: list[VerbalLabel] = field(default_factory=list)
    ratings: list[RaterScore] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(set(self.members)) != len(self.members):
            raise DataError(f"duplicate member ids in group {self.group_id!r}")
        known = set(self.members)
        length = self.session_length

        def in_span(t):
            return 0.0 <= t <= length

        by_speaker = defaultdict(list)
        for turn in self.turns:
            if turn.speaker not in known:
                raise DataError(f"turn speaker {turn.speaker!r} is not a group member")
            if not (in_span(turn.start) and in_span(turn.end)):
                raise DataError(f"turn {turn} outside [0, {length}]")
            by_speaker[turn.speaker].append(turn)
        for speaker, turns in by_speaker.items():
            turns = sorted(turns, key=lambda t: t.start)
            for prev, nxt in zip(turns, turns[1:]):
                if nxt.start < prev.end:
                    raise DataError(f"overlapping turns for speaker {speaker!r} at {nxt.start}")
        for member, frames in self.frames.items():
            if member not in known:
                raise DataError(f"frames for unknown member {member!r}")
            for fr in frames:
                if not in_span(fr.timestamp):
                    raise DataError(f"frame at {fr.timestamp} outside [0, {length}]")
        for lab in self.verbal_labels:
            if lab.member not in known:
                raise DataError(f"verbal label for unknown member {lab.member!r}")
        for r in self.ratings:
            if r.member not in known:
                raise DataError(f"rating for unknown member {r.member!r}")


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _parse_frame(obj: dict) -> tuple[str, FaceFrame]:
    au = {int(k): bool(v) for k, v in (obj.get("au") or {}).items()}
    conf = obj.get("confidence")
    # no detected face counts as zero confidence
    if conf is None or obj.get("success") is False:
        conf = 0.0
    return str(obj["member"]), FaceFrame(
        timestamp=float(obj["timestamp"]),
        au_active=au,
        confidence=float(conf),
        pitch=float(obj.get("pitch") or 0.0),
        yaw=float(obj.get("yaw") or 0.0),
        roll=float(obj.get("roll") or 0.0),
    )


def load_session(directory) -> SessionLog:
    """Parse a session directory. Raises DataError listing any missing files."""
    directory = Path(directory)
    missing = [name for name in SESSION_FILES if not (directory / name).is_file()]
    if missing:
        raise DataError(f"{directory}: missing session files: {', '.join(missing)}")
    try:
        meta = json.loads((directory / "session.json").read_text())
        members = [str(m) for m in meta["members"]]
        turns = [
            TurnEvent(str(r["speaker"]), float(r["start"]), float(r["end"]))
            for r in _read_csv(directory / "turns.csv")
        ]
        frames: dict[str, list[FaceFrame]] = {m: [] for m in members}
        with open(directory / "frames.jsonl") as fh:
            for line in fh:
                if line.strip():
                    member, frame = _parse_frame(json.loads(line))
                    frames.setdefault(member, []).append(frame)
        verbal = [
            VerbalLabel(int(r["slice"]), str(r["member"]), r["channel"], int(r["count"]))
            for r in _read_csv(directory / "verbal.csv")
        ]
        ratings = [
            RaterScore(int(r["slice"]), str(r["member"]), str(r["rater"]), int(r["score"]),
                       float(r["hit_duration"]))
            for r in _read_csv(directory / "ratings.csv")
        ]
        return SessionLog(
            group_id=str(meta["group_id"]),
            members=members,
            session_length=float(meta["session_length"]),
            turns=turns,
            frames=frames,
            verbal_labels=verbal,
            ratings=ratings,
        )
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{directory}: malformed session file ({exc!r})") from exc
