"""Command line: run one mission, a seed batch, or summarise a directory of reports."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from ..baselines import PolicyKind
from .config import ConfigError, load_config
from .engine import run_mission
from .report import MissionReport, aggregate, write_summary_csv
from .scenarios import pruning_batch


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (inclusive) or a comma list."""
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, policy=args.policy)
    rep = run_mission(cfg)
    _write(rep.to_json(), args.out)
    m = rep.metrics
    print(f"{cfg.policy.value} seed={cfg.seed}: SST={m['SST']:.1f} victims={m['victims_found']}/"
          f"{m['victims_total']} coverage={m['pct_coverage']:.1f}% t={m['duration']:.1f}s",
          file=sys.stderr)
    return 0


def cmd_batch(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in parse_seeds(args.seeds):
        cfg = load_config(args.config, seed=seed, policy=args.policy)
        rep = run_mission(cfg)
        rep.save(out / f"{cfg.policy.value}_seed{seed}.json")
        reports.append(rep)
        print(f"{cfg.policy.value} seed={seed}: SST={rep.metrics['SST']:.1f}", file=sys.stderr)
    summary = aggregate(reports)
    summary["policy"] = reports[0].meta["policy"] if reports else None
    (out / f"aggregate_{summary['policy']}.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return 0


def cmd_compare(args) -> int:
    reports = [MissionReport.load(p) for p in sorted(Path(args.dir).glob("*.json"))
               if not p.name.startswith("aggregate")]
    if not reports:
        print(f"no reports in {args.dir}", file=sys.stderr)
        return 1
    n = write_summary_csv(reports, args.out)
    by_policy: dict[str, list[MissionReport]] = {}
    for r in reports:
        by_policy.setdefault(r.meta["policy"], []).append(r)
    for policy in sorted(by_policy):
        agg = aggregate(by_policy[policy])
        print(f"{policy}: runs={agg['runs']} SST={agg['SST']['mean']:.1f}±{agg['SST']['std']:.1f} "
              f"victims={agg['pct_victims']['mean']:.1f}% efficiency={agg['coverage_efficiency']['mean']:.3f}",
              file=sys.stderr)
    print(f"wrote {n} rows to {args.out}", file=sys.stderr)
    return 0


def cmd_corridor(args) -> int:
    trials = pruning_batch(parse_seeds(args.seeds))
    _write(json.dumps([t.as_dict() for t in trials], indent=1) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrsearch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    policies = [k.value for k in PolicyKind]

    r = sub.add_parser("run", help="run one mission and write its report")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--policy", choices=policies)
    r.add_argument("--out", help="report path (default: stdout)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run one mission per seed")
    b.add_argument("--config", required=True)
    b.add_argument("--seeds", required=True, help="a..b or a,b,c")
    b.add_argument("--policy", choices=policies)
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(func=cmd_batch)

    c = sub.add_parser("compare", help="summarise a directory of reports as CSV")
    c.add_argument("--dir", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("corridor", help="pruning comparison on the scripted loop-closure corridor")
    d.add_argument("--seeds", default="0..9")
    d.add_argument("--out")
    d.set_defaults(func=cmd_corridor)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
