import json

import pytest
from hypothesis import given, strategies as st

from ctpanel.affect import (
    DEFAULT_RULES,
    AffectRule,
    affect_indicators,
    dominant_affect,
    evaluate_rules,
    head_motion_variance,
    load_rules,
    make_ruleset,
    truth_table,
)
from ctpanel.errors import ConfigError
from ctpanel.session import AU_CODES, FaceFrame

from oracles import RULE_ORACLE


def frame(aus=(), conf=1.0, pitch=0.0, yaw=0.0, roll=0.0, t=0.0):
    return FaceFrame(t, {a: a in aus for a in AU_CODES}, conf, pitch, yaw, roll)


def test_joy_rule():
    assert evaluate_rules(frame({6, 12})) == {"joy"}


def test_nothing_active():
    assert evaluate_rules(frame()) == frozenset()


def test_joy_and_delight_cofire():
    assert evaluate_rules(frame({6, 7, 12, 25, 26})) == {"joy", "delight"}


def test_forbidden_au_blocks_delight():
    assert evaluate_rules(frame({7, 12, 25, 26, 45})) == frozenset()


def test_missing_au_keys_count_as_inactive():
    assert evaluate_rules(FaceFrame(0.0, {6: True, 12: True})) == {"joy"}


def test_default_rules_match_table():
    assert [(r.name, sorted(r.required), sorted(r.forbidden)) for r in DEFAULT_RULES] == [
        ("joy", [6, 12], []),
        ("delight", [7, 12, 25, 26], [45]),
        ("surprise", [1, 2, 5, 26], []),
        ("confusion", [4, 7], [12]),
        ("flow", [5, 7, 23], [2, 15, 45]),
    ]


def test_bundled_rules_file_equals_defaults():
    assert load_rules() == DEFAULT_RULES


def test_truth_table_matches_oracle():
    rows = 0
    for active, fired in truth_table():
        expected = {name for name, rule in RULE_ORACLE.items() if rule(active)}
        assert fired == expected
        rows += 1
    assert rows == 4096


def test_rule_invariants():
    with pytest.raises(ConfigError):
        AffectRule("bad", frozenset({6}), frozenset({6}))
    with pytest.raises(ConfigError):
        make_ruleset([AffectRule("x", frozenset({1})), AffectRule("x", frozenset({2}))])


def test_rules_file_override(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"rules": [{"name": "smile", "required": [12]}]}))
    rules = load_rules(path)
    assert evaluate_rules(frame({12}), rules) == {"smile"}
    path.write_text("{}")
    with pytest.raises(ConfigError):
        load_rules(path)


# -- dominant affect ------------------------------------------------------------------------

def test_all_joy():
    name, counts = dominant_affect([frame({6, 12}, t=i) for i in range(10)])
    assert name == "joy" and counts["joy"] == 10


def test_majority_wins():
    frames = [frame({4, 7}) for _ in range(6)] + [frame({6, 12}) for _ in range(4)]
    assert dominant_affect(frames)[0] == "confusion"


def test_low_confidence_gated():
    name, counts = dominant_affect([frame({6, 12}, conf=0.5) for _ in range(5)], min_confidence=0.8)
    assert name is None and counts["joy"] == 0


def test_confidence_at_threshold_kept():
    assert dominant_affect([frame({6, 12}, conf=0.8)])[0] == "joy"


def test_tie_priority():
    frames = [frame({4, 7}), frame({6, 12})]
    assert dominant_affect(frames)[0] == "joy"
    assert dominant_affect(frames, priority=["confusion", "joy"])[0] == "confusion"


def test_indicator_modes():
    frames = [frame({4, 7}), frame({4, 7}), frame({6, 12})]
    assert affect_indicators(frames) == {"joy": 0.0, "delight": 0.0, "surprise": 0.0, "confusion": 1.0, "flow": 0.0}
    assert affect_indicators(frames, mode="any")["joy"] == 1.0
    with pytest.raises(ValueError):
        affect_indicators(frames, mode="most")


au_sets = st.sets(st.sampled_from(AU_CODES))


@given(st.lists(st.tuples(au_sets, st.floats(0, 1)), max_size=20), st.randoms(use_true_random=False))
def test_dominant_affect_order_invariant(spec, rnd):
    frames = [frame(a, c) for a, c in spec]
    shuffled = list(frames)
    rnd.shuffle(shuffled)
    assert dominant_affect(frames) == dominant_affect(shuffled)


# -- head motion ---------------------------------------------------------------------------------

def test_constant_pitch_zero_variance():
    assert head_motion_variance([frame(pitch=0.1) for _ in range(3)]).nod_var == 0.0


def test_population_variance():
    feats = head_motion_variance([frame(pitch=p) for p in (1.0, 2.0, 3.0)])
    assert feats.nod_var == pytest.approx(2 / 3)


def test_one_frame_missing():
    feats = head_motion_variance([frame(pitch=1.0), frame(pitch=2.0, conf=0.1)])
    assert feats.nod_var is None and feats.turn_var is None and feats.incline_var is None


angles = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)), min_size=2, max_size=30)


@given(angles, st.floats(-2, 2), st.floats(0.1, 5))
def test_head_variance_translation_and_scaling(vals, shift, scale):
    base = head_motion_variance([frame(pitch=p, yaw=y, roll=r) for p, y, r in vals])
    moved = head_motion_variance([frame(pitch=p + shift, yaw=y + shift, roll=r + shift) for p, y, r in vals])
    scaled = head_motion_variance([frame(pitch=p * scale, yaw=y * scale, roll=r * scale) for p, y, r in vals])
    for attr in ("nod_var", "turn_var", "incline_var"):
        assert getattr(moved, attr) == pytest.approx(getattr(base, attr), abs=1e-9)
        assert getattr(scaled, attr) == pytest.approx(scale ** 2 * getattr(base, attr), rel=1e-9, abs=1e-9)
        assert getattr(base, attr) >= 0
