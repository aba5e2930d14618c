"""Rule-based affect from facial action units, and head-motion variance per slice.

The surprise rule's "upper lid raise" is graded in FACS (5b); frames here carry
booleans, so it maps to plain AU 5.
"""
from __future__ import annotations

import json
import statistics
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigError
from .session import AU_CODES, FaceFrame

DEFAULT_CONFIDENCE = 0.8


@dataclass(frozen=True)
class AffectRule:
    name: str
    required: frozenset
    forbidden: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "required", frozenset(int(a) for a in self.required))
        object.__setattr__(self, "forbidden", frozenset(int(a) for a in self.forbidden))
        if self.required & self.forbidden:
            raise ConfigError(f"rule {self.name!r}: AUs {sorted(self.required & self.forbidden)} both required and forbidden")

    def fires(self, au_active) -> bool:
        return all(au_active.get(a, False) for a in self.required) and not any(
            au_active.get(a, False) for a in self.forbidden
        )


RuleSet = tuple


def make_ruleset(rules: Iterable[AffectRule]) -> RuleSet:
    rules = tuple(rules)
    names = [r.name for r in rules]
    if len(set(names)) != len(names):
        raise ConfigError("rule names must be unique")
    return rules


def load_rules(path=None) -> RuleSet:
    """Load a rules file (``{"rules": [{"name", "required", "forbidden"}, ...]}``).

    With no path the bundled default set is returned.
    """
    if path is None:
        text = resources.files("ctpanel.data").joinpath("default_rules.json").read_text()
        source = "default_rules.json"
    else:
        text = Path(path).read_text()
        source = str(path)
    try:
        spec = json.loads(text)
        return make_ruleset(
            AffectRule(r["name"], frozenset(r["required"]), frozenset(r.get("forbidden", ())))
            for r in spec["rules"]
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{source}: rules: {exc!r}") from exc


DEFAULT_RULES = make_ruleset([
    AffectRule("joy", frozenset({6, 12})),
    AffectRule("delight", frozenset({7, 12, 25, 26}), frozenset({45})),
    AffectRule("surprise", frozenset({1, 2, 5, 26})),
    AffectRule("confusion", frozenset({4, 7}), frozenset({12})),
    AffectRule("flow", frozenset({23, 5, 7}), frozenset({15, 45, 2})),
])
DEFAULT_PRIORITY = ("joy", "delight", "surprise", "confusion", "flow")


def evaluate_rules(frame: FaceFrame, rules: RuleSet = DEFAULT_RULES) -> frozenset:
    return frozenset(r.name for r in rules if r.fires(frame.au_active))


def _gate(frames, min_confidence):
    return [f for f in frames if f.confidence >= min_confidence]


def dominant_affect(
    frames: Iterable[FaceFrame],
    rules: RuleSet = DEFAULT_RULES,
    min_confidence: float = DEFAULT_CONFIDENCE,
    priority: Sequence[str] | None = None,
):
    """Most frequent affect over the confident frames of a slice.

    Returns ``(name or None, counts)`` where ``counts`` maps every rule name to
    the number of qualifying frames on which it fired.
    """
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError("min_confidence must be in [0, 1]")
    counts = Counter({r.name: 0 for r in rules})
    for frame in _gate(frames, min_confidence):
        counts.update(evaluate_rules(frame, rules))
    counts = dict(counts)
    top = max(counts.values(), default=0)
    if top == 0:
        return None, counts
    order = list(priority) if priority is not None else [n for n in DEFAULT_PRIORITY if n in counts]
    order += [r.name for r in rules if r.name not in order]
    return next(n for n in order if counts.get(n, 0) == top), counts


def affect_indicators(frames, rules=DEFAULT_RULES, min_confidence=DEFAULT_CONFIDENCE, mode="dominant"):
    """Binary affect channels for one slice.

    ``mode="dominant"`` one-hot encodes the dominant affect; ``mode="any"`` sets
    each affect that fired on at least one qualifying frame.
    """
    name, counts = dominant_affect(frames, rules, min_confidence)
    if mode == "dominant":
        return {r.name: float(r.name == name) for r in rules}
    if mode == "any":
        return {r.name: float(counts[r.name] > 0) for r in rules}
    raise ValueError(f"unknown affect mode {mode!r}")


@dataclass(frozen=True)
class HeadMotionFeatures:
    nod_var: Optional[float]
    turn_var: Optional[float]
    incline_var: Optional[float]


def head_motion_variance(frames: Iterable[FaceFrame], min_confidence: float = DEFAULT_CONFIDENCE) -> HeadMotionFeatures:
    """Population variance of pitch, yaw and roll over confident frames.

    Fewer than two qualifying frames leaves all three missing.
    """
    kept = _gate(frames, min_confidence)
    if len(kept) < 2:
        return HeadMotionFeatures(None, None, None)
    # exact rational accumulation: a constant series gives exactly 0
    return HeadMotionFeatures(
        float(statistics.pvariance([f.pitch for f in kept])),
        float(statistics.pvariance([f.yaw for f in kept])),
        float(statistics.pvariance([f.roll for f in kept])),
    )


def truth_table(rules: RuleSet = DEFAULT_RULES):
    """Yield ``(active AU set, fired names)`` for all 2^12 AU combinations."""
    for mask in range(1 << len(AU_CODES)):
        active = {au: bool(mask >> i & 1) for i, au in enumerate(AU_CODES)}
        yield active, evaluate_rules(FaceFrame(0.0, active), rules)
