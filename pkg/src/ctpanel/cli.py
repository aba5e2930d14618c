"""``ctpanel`` command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import SCHEMA_VERSION, __version__
from .errors import ConfigError, CtPanelError, DataError

log = logging.getLogger("ctpanel")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- subcommands --------------------------------------------------------------------

def cmd_featurize(args) -> int:
    from .featurize import PipelineConfig, cmd_featurize as run
    from .turns import TurnMetricConfig

    for d in args.sessions:
        if not Path(d).is_dir():
            raise ConfigError(f"featurize.sessions: {d} is not a directory")
    if args.rules and not Path(args.rules).is_file():
        raise ConfigError(f"featurize.rules: {args.rules} not found")
    cfg = PipelineConfig(
        session_dirs=list(args.sessions),
        slice_len=args.slice,
        rules_path=args.rules,
        turn_config=TurnMetricConfig(args.alpha_in, args.alpha_out, args.epsilon, args.silence),
        min_raters=args.min_raters,
        time_sd=args.time_sd,
        min_confidence=args.confidence,
        affect_mode=args.affect_mode,
        out_dir=args.out,
        workers=args.workers,
    )
    manifest = run(cfg)
    failed = [s for s in manifest["sessions"] if s["status"] != "ok"]
    for s in manifest["sessions"]:
        print(f"{s['session']}: {s['status']}" + (f" ({s['error']})" if s["status"] != "ok" else ""))
    return 2 if failed else 0


def cmd_rate(args) -> int:
    from .reliability import derive_curiosity
    from .session import RaterScore

    try:
        with open(args.ratings, newline="") as fh:
            ratings = [RaterScore(int(r["slice"]), str(r["member"]), str(r["rater"]), int(r["score"]),
                                  float(r["hit_duration"])) for r in csv.DictReader(fh)]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.ratings}: malformed ratings ({exc!r})") from exc
    labels = derive_curiosity(ratings, args.min_raters, args.time_sd)
    lines = ["member,slice,score,subset_icc"]
    for c in sorted(labels, key=lambda c: (c.member, c.slice_index)):
        lines.append(f"{c.member},{c.slice_index},{c.score},{'' if c.subset_icc is None else repr(c.subset_icc)}")
    _atomic_write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_turns(args) -> int:
    from .panel import build_slice_grid
    from .session import TurnEvent
    from .turns import TurnMetricConfig, slice_turn_metrics

    try:
        with open(args.turns, newline="") as fh:
            turns = [TurnEvent(str(r["speaker"]), float(r["start"]), float(r["end"])) for r in csv.DictReader(fh)]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.turns}: malformed turns ({exc!r})") from exc
    if not turns:
        raise DataError(f"{args.turns}: no turns")
    members = sorted({t.speaker for t in turns})
    length = args.session_length or max(t.end for t in turns)
    grid = build_slice_grid(length, args.slice)
    cfg = TurnMetricConfig(args.alpha_in, args.alpha_out, args.epsilon, args.silence)

    def fmt(v):
        return "" if v is None else repr(v)

    lines = ["member,slice,turn_indegree,turn_outdegree"]
    for m, idx, ind, outd in slice_turn_metrics(turns, grid, members, cfg):
        lines.append(f"{m},{idx},{fmt(ind)},{fmt(outd)}")
    _atomic_write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_fit(args) -> int:
    from .config import load_model_config
    from .ctsem.estimate import dumps_fit, fit, rank_links, write_links
    from .panel import read_panels

    spec, opts = load_model_config(args.config)
    if args.mode:
        spec = spec.with_grouping(args.mode)
    panels = []
    for path in args.panel:
        panels.extend(read_panels(path))
    seed = opts.seed if args.seed is None else args.seed
    starts = opts.starts if args.starts is None else args.starts
    result = fit(spec, panels, starts=starts, seed=seed, maxiter=opts.maxiter, ftol=opts.ftol,
                 compute_se=opts.compute_se)
    _atomic_write(args.out, dumps_fit(result))
    if args.links and result.standardized is not None:
        write_links(rank_links(result.standardized, args.top_k or opts.top_k), args.links)
    print(f"loglik {result.loglik:.4f}  k {result.k}  AIC {result.aic:.4f}  converged {result.converged}")
    return 0


def compare_table(fits: list) -> list:
    """Rows ``(name, loglik, k, aic, delta_aic, ratio)`` relative to the first fit."""
    base = fits[0][1].aic
    rows = []
    for name, f in fits:
        ratio = f.aic / base if base != 0 else float("nan")
        rows.append((name, f.loglik, f.k, f.aic, f.aic - base, ratio))
    return rows


def cmd_compare(args) -> int:
    from .ctsem.estimate import read_fit

    fits = [(Path(p).stem, read_fit(p)) for p in args.fits]
    rows = compare_table(fits)
    print(f"{'model':<20} {'loglik':>14} {'k':>6} {'AIC':>14} {'dAIC':>14} {'ratio':>8}")
    for name, ll, k, a, d, r in rows:
        print(f"{name:<20} {ll:>14.3f} {k:>6d} {a:>14.3f} {d:>14.3f} {r:>7.2f}x")
    best = min(rows, key=lambda r: r[3])
    print(f"lowest AIC: {best[0]}")
    return 0


def cmd_simulate(args) -> int:
    from .config import load_design
    from .ctsem.estimate import spec_to_dict
    from .panel import dumps_panel
    from .sim import simulate

    cfg = load_design(args.design)
    design = cfg.design if args.seed is None else cfg.design.with_seed(args.seed)
    panels = simulate(design)
    out = Path(args.out)
    for panel in panels:
        _atomic_write(out / f"{panel.group_id}.jsonl", dumps_panel(panel))
    truth = {
        "schema_version": SCHEMA_VERSION,
        "seed": design.seed,
        "model": spec_to_dict(cfg.spec),
        "params": {gid: p.to_dict() for gid, p in zip(design.group_ids, design.true_params)},
    }
    _atomic_write(out / "truth.json", json.dumps(truth, indent=2) + "\n")
    print(f"wrote {len(panels)} group panels to {out}")
    return 0


def cmd_recover(args) -> int:
    from .config import load_design
    from .sim import recovery_experiment

    cfg = load_design(args.design)
    design = cfg.design if args.seed is None else cfg.design.with_seed(args.seed)
    report = recovery_experiment(design, args.reps, cfg.spec, compare_free=cfg.compare_free,
                                 starts=cfg.fit.starts, workers=args.workers)
    out = {"schema_version": SCHEMA_VERSION, **report.to_dict()}
    _atomic_write(args.out, json.dumps(out, indent=2) + "\n")
    print(f"drift MAE {report.drift_mae:.4f}  loading MAE {report.loading_mae:.4f}  "
          f"sign recovery {report.sign_recovery_rate:.3f}  constrained wins {report.constrained_wins_rate}")
    return 0


def cmd_report(args) -> int:
    from .ctsem.estimate import rank_links, read_fit, write_links

    result = read_fit(args.fit)
    if result.standardized is None:
        raise DataError(f"{args.fit}: no standardized estimates stored")
    report = rank_links(result.standardized, args.top_k)
    if args.out:
        write_links(report, args.out)
    for line in report.lines():
        print(line)
    return 0


# -- parser ---------------------------------------------------------------------------

def _turn_args(p):
    p.add_argument("--alpha-in", type=float, default=-0.5)
    p.add_argument("--alpha-out", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--silence", choices=("floor", "gap"), default="floor")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctpanel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ctpanel {__version__} (schema {SCHEMA_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("featurize", help="session directories -> panel.jsonl")
    p.add_argument("sessions", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--slice", type=float, default=10.0)
    p.add_argument("--rules")
    p.add_argument("--min-raters", type=int, default=2)
    p.add_argument("--time-sd", type=float, default=1.5)
    p.add_argument("--confidence", type=float, default=0.8)
    p.add_argument("--affect-mode", choices=("dominant", "any"), default="dominant")
    p.add_argument("--workers", type=int, default=1)
    _turn_args(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("rate", help="multi-rater ratings -> one curiosity label per unit")
    p.add_argument("--ratings", required=True)
    p.add_argument("--min-raters", type=int, default=2)
    p.add_argument("--time-sd", type=float, default=1.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("turns", help="turns.csv -> per-slice turn-taking metrics")
    p.add_argument("--turns", required=True)
    p.add_argument("--slice", type=float, default=10.0)
    p.add_argument("--session-length", type=float)
    p.add_argument("--out", required=True)
    _turn_args(p)
    p.set_defaults(func=cmd_turns)

    p = sub.add_parser("fit", help="fit the multiple-group CT model")
    p.add_argument("--panel", action="append", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("constrained", "free"))
    p.add_argument("--seed", type=int)
    p.add_argument("--starts", type=int)
    p.add_argument("--links")
    p.add_argument("--top-k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="AIC comparison of fit.json files")
    p.add_argument("fits", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="simulate panels from a design file")
    p.add_argument("--design", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recover", help="parameter-recovery experiment")
    p.add_argument("--design", required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("report", help="ranked links from a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except CtPanelError as exc:
        print(f"ctpanel: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"ctpanel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
