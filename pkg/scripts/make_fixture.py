"""Generate the small synthetic session fixture shipped under tests/fixtures/sessions.

Usage: python scripts/make_fixture.py [OUT_DIR]
"""
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ctpanel.session import AU_CODES, VERBAL_CHANNELS

SESSIONS = {"groupA": ("a1", "a2", "a3"), "groupB": ("b1", "b2", "b3")}
LENGTH = 300.0
RATERS = ("r1", "r2", "r3", "r4")


def make_session(out: Path, group_id: str, members, rng: np.random.Generator) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "session.json").write_text(
        json.dumps({"group_id": group_id, "members": list(members), "session_length": LENGTH}, indent=2) + "\n")

    turns = []
    t, prev = 0.0, None
    while t < LENGTH - 1:
        speaker = rng.choice([m for m in members if m != prev])
        dur = float(np.round(rng.uniform(1.0, 8.0), 2))
        end = min(t + dur, LENGTH)
        turns.append((speaker, round(t, 2), round(end, 2)))
        # small gaps and occasional overlaps between different speakers
        t = end + float(np.round(rng.uniform(-0.5, 1.5), 2))
        t = max(t, turns[-1][1] + 0.1)
        prev = speaker
    with open(out / "turns.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker", "start", "end"])
        w.writerows(turns)

    # per-member latent "engagement" drives AUs, verbal counts and ratings
    n_slices = int(LENGTH // 10)
    engagement = {m: np.cumsum(rng.normal(0, 0.4, n_slices)) * 0.3 for m in members}
    with open(out / "frames.jsonl", "w") as fh:
        for m in members:
            for sec in range(int(LENGTH)):
                e = engagement[m][min(sec // 10, n_slices - 1)]
                p = 1 / (1 + np.exp(-e))
                au = {str(c): bool(rng.random() < (p * 0.6 if c in (6, 12, 25, 26) else 0.2)) for c in AU_CODES}
                detected = rng.random() > 0.05
                rec = {
                    "member": m,
                    "timestamp": float(sec),
                    "au": au,
                    "confidence": round(float(rng.uniform(0.6, 1.0)), 3) if detected else None,
                    "success": detected,
                    "pitch": round(float(rng.normal(0, 0.1 + 0.05 * p)), 4),
                    "yaw": round(float(rng.normal(0, 0.15)), 4),
                    "roll": round(float(rng.normal(0, 0.05)), 4),
                }
                fh.write(json.dumps(rec) + "\n")

    with open(out / "verbal.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slice", "member", "channel", "count"])
        for m in members:
            for s in range(n_slices):
                rate = np.exp(engagement[m][s] * 0.5) * 0.15
                for ch in VERBAL_CHANNELS:
                    k = int(rng.poisson(rate))
                    if k:
                        w.writerow([s, m, ch, k])

    with open(out / "ratings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slice", "member", "rater", "score", "hit_duration"])
        for m in members:
            for s in range(n_slices):
                truth = engagement[m][s]
                for r in RATERS:
                    if r == "r4":
                        score = int(rng.integers(0, 3))  # careless rater
                        hit = 2.0
                    else:
                        noisy = truth + rng.normal(0, 0.5)
                        score = int(np.digitize(noisy, [-0.4, 0.4]))
                        hit = 20.0 + (int(r[1]) - 2) * 2.0
                    w.writerow([s, m, r, score, hit])


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    root = Path(argv[0]) if argv else Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "sessions"
    rng = np.random.default_rng(20240917)
    for gid, members in SESSIONS.items():
        make_session(root / gid, gid, members, rng)
    print(f"wrote {len(SESSIONS)} sessions to {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
