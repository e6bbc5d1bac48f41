"""Command-line entry point: ``teleopsim <study> [options]``.

Exit status is 0 when every cell completed without divergence, 1 when at
least one cell diverged, and 2 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cf
from . import experiments as ex
from .estimation import ConfigError

log = logging.getLogger("teleopsim")


def _csv_list(text: str) -> list[str]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleopsim", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config merged over the defaults")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="worker processes for independent cells")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = p.add_subparsers(dest="command", required=True)
    ol = sub.add_parser("open-loop", parents=[common], help="stiffness curves from open-loop runs")
    ol.add_argument("--estimators", type=_csv_list, help="e.g. fs,d,v")

    cl = sub.add_parser("closed-loop", parents=[common], help="transparency and stability metrics")
    cl.add_argument("--estimators", type=_csv_list)
    cl.add_argument("--axes", type=_csv_list, help="subset of x,y,z")
    cl.add_argument("--popc", choices=("on", "off", "both"))

    rf = sub.add_parser("refit", parents=[common], help="NF/FS/EF refitting of the neural estimator")
    rf.add_argument("--axes", type=_csv_list, help="axes for data collection and evaluation")
    rf.add_argument("--popc", choices=("on", "off", "both"))
    rf.add_argument("--base", metavar="PATH", help="existing base checkpoint to refit")

    dr = sub.add_parser("demo-replay", parents=[common], help="scripted 35 s demo with the refit model")
    dr.add_argument("--checkpoint", metavar="PATH",
                    help="model checkpoint (default: OUT/refit/models/ef.json)")

    sub.add_parser("dump-config", parents=[common], help="print the merged config as JSON")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    axes = getattr(args, "axes", None)
    if axes and args.command == "closed-loop":
        o["closed_loop"] = {"axes": axes}
    if axes and args.command == "refit":
        o["refit"] = {"axes": axes}
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cf.load(args.config, _overrides(args))
        if args.command == "dump-config":
            import json
            print(json.dumps(cfg, sort_keys=True, indent=2))
            return 0
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        if args.command == "open-loop":
            res = ex.cmd_open_loop(cfg, args.out, args.estimators, args.parallel)
        elif args.command == "closed-loop":
            res = ex.cmd_closed_loop(cfg, args.out, args.estimators, None, args.popc, args.parallel)
        elif args.command == "refit":
            res = ex.cmd_refit(cfg, args.out, args.popc, args.base, args.parallel)
        else:
            res = ex.cmd_demo_replay(cfg, args.out, args.checkpoint)
    except (ConfigError, ValueError, OSError) as err:
        print(f"teleopsim: error: {err}", file=sys.stderr)
        return 2
    print(f"{res.study}: {res.n_runs} runs, {len(res.diverged)} diverged -> {res.out}")
    for key in res.diverged:
        print(f"  diverged: {key}")
    return 0 if res.ok else 1


if __name__ == "__main__":
    sys.exit(main())
