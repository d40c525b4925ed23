"""Command-line harness: run, sweep, replay, sdf-build and report."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .config import load_config


def _config(args):
    return load_config(args.config, args.set)


def _seeds(text, default):
    if not text:
        return list(default)
    if ":" in text:
        lo, hi = (int(v) for v in text.split(":"))
        return list(range(lo, hi))
    return [int(v) for v in text.split(",")]


def cmd_run(args) -> int:
    from .experiment import grid_for, run_once

    cfg = _config(args)
    seeds = _seeds(args.seeds, cfg.seeds[:1] if args.seeds is None else cfg.seeds)
    grid = grid_for(cfg)
    out = Path(args.out) if args.out else None
    ok = True
    for s in seeds:
        res = run_once(cfg, s, trace_dir=out, grid=grid)
        ok &= res.terminated
        print(json.dumps(asdict(res)))
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    from .experiment import run_sweep

    cfg = _config(args)
    if not cfg.sweep:
        print("config has no sweep grid", file=sys.stderr)
        return 2
    res = run_sweep(cfg, args.out, processes=args.jobs, seeds=_seeds(args.seeds, cfg.seeds))
    sys.stdout.write(res.csv())
    return 0 if all(r["terminated"] == r["runs"] for r in res.rows) else 1


def cmd_replay(args) -> int:
    from .experiment import replay
    from .world import load_observations

    cfg = _config(args)
    records = load_observations(args.observations)
    out = replay(cfg, records, seed=args.seed, truth=json.loads(args.truth) if args.truth else None)
    if not args.verbose:
        out.pop("steps")
    print(json.dumps(out))
    return 0 if out["terminated"] else 1


def cmd_sdf_build(args) -> int:
    from .geometry import build_sdf

    cfg = _config(args)
    res = args.resolution or float(cfg.get("grid.resolution", 0.005))
    pad = float(cfg.get("grid.padding", 0.3))
    t0 = time.perf_counter()
    grid = build_sdf(cfg.env, res, pad)
    grid.save(args.output)
    print(f"{args.output}: dims {list(grid.dims)} at {res} m, {time.perf_counter() - t0:.1f} s")
    return 0


def long_format(rows: list[dict]) -> list[dict]:
    """One row per (cell, metric) with mean and sd, for plotting."""
    out = []
    for row in rows:
        keys = {k: v for k, v in row.items() if not k.endswith(("_mean", "_sd"))
                and k not in ("runs", "terminated", "failed")}
        for k in row:
            if k.endswith("_mean"):
                metric = k[: -len("_mean")]
                out.append({**keys, "metric": metric, "mean": row[k], "sd": row.get(metric + "_sd", "")})
    return out


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[str(r[c]) for c in cols] for r in rows]
    width = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, width))]
    lines.append("  ".join("-" * w for w in width))
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, width)) for r in cells]
    return "\n".join(lines)


def cmd_report(args) -> int:
    with open(args.summary) as fh:
        rows = list(csv.DictReader(fh))
    print(format_table(rows))
    if args.long:
        lf = long_format(rows)
        with open(args.long, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(lf[0]) if lf else ["metric", "mean", "sd"], lineterminator="\n")
            w.writeheader()
            w.writerows(lf)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="touchcal", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", default="box_table", help="YAML path or packaged fixture name")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config leaf by dotted path (repeatable)")

    sp = sub.add_parser("run", help="closed-loop calibration for one or more seeds")
    common(sp)
    sp.add_argument("--seeds", help="comma list or lo:hi range; default is the first config seed")
    sp.add_argument("--all-seeds", dest="seeds", action="store_const", const="", help="every config seed")
    sp.add_argument("-o", "--out", help="directory for traces and observation logs")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="sweep grid x seeds, summary CSV")
    common(sp)
    sp.add_argument("--seeds")
    sp.add_argument("-o", "--out", help="directory for summary.csv, timing.csv and traces")
    sp.add_argument("-j", "--jobs", type=int, default=1, help="parallel runs")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("replay", help="feed a logged observation file to the estimator")
    common(sp)
    sp.add_argument("observations")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--truth", help="JSON 6-vector to score the final estimate against")
    sp.add_argument("-v", "--verbose", action="store_true", help="include per-step records")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("sdf-build", help="build and cache the environment SDF grid")
    common(sp)
    sp.add_argument("output")
    sp.add_argument("--resolution", type=float)
    sp.set_defaults(func=cmd_sdf_build)

    sp = sub.add_parser("report", help="summary CSV to a table and a long-format CSV")
    sp.add_argument("summary")
    sp.add_argument("--long", help="write plot-ready long-format CSV here")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
