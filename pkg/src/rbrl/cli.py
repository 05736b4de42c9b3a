"""Command line: ``rbrl {run,sweep,summarize,preset}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .harness import ExperimentConfig, PRESETS, parse_axis, preset, run_sweep, summarize_dir, write_summary_csv


def _seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else preset(args.preset)
    if args.seeds is not None:
        cfg = dataclasses.replace(cfg, seeds=args.seeds)
    return cfg


def _print_table(rows, axis):
    print(f"{axis:>16} {'mean':>12} {'stderr':>10} {'n':>3}")
    for r in rows:
        mean = "missing" if r.mean is None else f"{r.mean:.3f}"
        se = "" if r.stderr is None else f"{r.stderr:.3f}"
        print(f"{str(r.axis_value):>16} {mean:>12} {se:>10} {r.n_seeds:>3}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbrl", description="Rating-based RL experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="experiment JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
        sp.add_argument("--seeds", type=_seeds, help="override seeds, e.g. 0,1,2")
        sp.add_argument("--out", metavar="DIR", required=True)
        sp.add_argument("--workers", type=int, default=1, metavar="N")

    common(sub.add_parser("run", help="run one config over its seeds"))
    sw = sub.add_parser("sweep", help="run a config across values of one parameter")
    common(sw)
    sw.add_argument("--axis", required=True, metavar="NAME=v1,v2,...")

    sm = sub.add_parser("summarize", help="recompute summary.csv from run records")
    sm.add_argument("--out", metavar="DIR", required=True)

    pr = sub.add_parser("preset", help="print a named config as JSON")
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--out", metavar="PATH", help="write to a file instead of stdout")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "preset":
            text = preset(args.name).to_json()
            if args.out:
                with open(args.out, "w") as f:
                    f.write(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.verb == "summarize":
            rows = summarize_dir(args.out)
            write_summary_csv(rows, f"{args.out}/summary.csv")
            _print_table(rows, "axis_value")
            return 0
        cfg = _load(args)
        if args.verb == "run":
            res = run_sweep(cfg, None, [], args.workers, args.out)
        else:
            axis, values = parse_axis(args.axis)
            res = run_sweep(cfg, axis, values, args.workers, args.out)
        _print_table(res.summaries, res.axis)
        failed = sum(r.status != "ok" for r in res.records.values())
        if failed:
            print(f"{failed} run(s) failed; see runs/*/record.json", file=sys.stderr)
        return 0
    except (ValueError, OSError) as e:
        print(f"rbrl: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
