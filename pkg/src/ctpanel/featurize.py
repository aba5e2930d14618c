"""Session directory -> behavior panel (verbal counts, affect, head motion, turns, curiosity)."""
from __future__ import annotations

import bisect
import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import SCHEMA_VERSION, __version__
from .affect import DEFAULT_CONFIDENCE, affect_indicators, head_motion_variance, load_rules
from .errors import CtPanelError
from .panel import CHANNELS, BehaviorPanel, assemble_panel, build_slice_grid, dumps_panel
from .reliability import derive_curiosity
from .session import SessionLog, load_session
from .turns import TurnMetricConfig, slice_turn_metrics

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    session_dirs: list = field(default_factory=list)
    slice_len: float = 10.0
    rules_path: Optional[str] = None
    turn_config: TurnMetricConfig = field(default_factory=TurnMetricConfig)
    min_raters: int = 2
    time_sd: float = 1.5
    min_confidence: float = DEFAULT_CONFIDENCE
    affect_mode: str = "dominant"
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1

    def settings(self) -> dict:
        return {
            "slice_len": self.slice_len,
            "rules": self.rules_path or "default",
            "turn_metrics": asdict(self.turn_config),
            "min_raters": self.min_raters,
            "time_sd": self.time_sd,
            "min_confidence": self.min_confidence,
            "affect_mode": self.affect_mode,
        }


def _bucket(frames, grid):
    """Assign frames to slices by timestamp; [start, end), the final slice also takes its end."""
    starts = [s.start for s in grid]
    out = {s.index: [] for s in grid}
    last = grid[-1]
    for fr in frames:
        i = bisect.bisect_right(starts, fr.timestamp) - 1
        if i < 0:
            continue
        s = grid[i]
        if fr.timestamp < s.end or (s is last and fr.timestamp == s.end):
            out[s.index].append(fr)
    return out


def session_features(session: SessionLog, config: PipelineConfig):
    grid = build_slice_grid(session, config.slice_len)
    rules = load_rules(config.rules_path)
    entries = []
    for lab in session.verbal_labels:
        entries.append((lab.member, lab.slice_index, lab.channel, lab.count))
    for member in session.members:
        by_slice = _bucket(session.frames.get(member, []), grid)
        for s in grid:
            frames = by_slice[s.index]
            for name, v in affect_indicators(frames, rules, config.min_confidence, config.affect_mode).items():
                if name in CHANNELS:
                    entries.append((member, s.index, name, v))
            head = head_motion_variance(frames, config.min_confidence)
            entries += [(member, s.index, "head_nod", head.nod_var),
                        (member, s.index, "head_turn", head.turn_var),
                        (member, s.index, "head_incline", head.incline_var)]
    for member, idx, indeg, outdeg in slice_turn_metrics(session.turns, grid, session.members, config.turn_config):
        entries += [(member, idx, "turn_indegree", indeg), (member, idx, "turn_outdegree", outdeg)]
    labels = derive_curiosity(session.ratings, config.min_raters, config.time_sd)
    curiosity = {(c.member, c.slice_index): c.score for c in labels}
    return grid, entries, curiosity, labels


def featurize_session(directory, config: PipelineConfig) -> BehaviorPanel:
    session = load_session(directory)
    grid, entries, curiosity, _ = session_features(session, config)
    return assemble_panel(session, grid, entries, curiosity)


def _run_one(args):
    directory, config = args
    try:
        panel = featurize_session(directory, config)
        return str(directory), dumps_panel(panel), None
    except CtPanelError as exc:
        return str(directory), None, str(exc)


def cmd_featurize(config: PipelineConfig) -> dict:
    """Write ``<out>/<session>/panel.jsonl`` per session plus ``featurize_manifest.json``.

    Sessions are independent; a failing session is reported in the manifest
    and does not stop the others.
    """
    out = Path(config.out_dir)
    jobs = [(Path(d), config) for d in config.session_dirs]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    sessions = []
    for (directory, _), (_, text, error) in zip(jobs, results):
        entry = {"session": directory.name, "source": str(directory)}
        if error is None:
            target = out / directory.name / "panel.jsonl"
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text)
            entry.update(status="ok", panel=str(target.relative_to(out)))
        else:
            log.error("%s: %s", directory, error)
            entry.update(status="error", error=error)
        sessions.append(entry)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "channels": list(CHANNELS),
        "settings": config.settings(),
        "sessions": sessions,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "featurize_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
