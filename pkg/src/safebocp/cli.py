"""
Command-line front end.

Exit codes: 0 success, 1 a hard guarantee was violated or a trial failed,
2 usage or configuration error, 3 I/O or network error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, SweepAxes, config_to_dict, parse_config
from .datasets import DATA_DIR_ENV, ChecksumError, FetchError, fetch
from .experiments import MANIFEST_FILE, persist, replay_trial, run_sweep

EXIT_OK, EXIT_GUARANTEE, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("safebocp")


def _add_run_args(p):
    p.add_argument("--config", type=Path, help="TOML experiment config (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--replications", type=int, help="override the replication count")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--full", action="store_true", default=None,
                   help="full replication counts and the full MovieLens data")
    p.add_argument("--jobs", type=int, help="worker processes (default from config, 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safebocp", description="Safe Bayesian optimization experiments."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the base configuration (sweep axes ignored)")
    _add_run_args(p)
    p = sub.add_parser("sweep", help="run every sweep point of the configuration")
    _add_run_args(p)

    p = sub.add_parser("fetch-data", help="download and verify a dataset")
    p.add_argument("dataset", nargs="?", default="ml-100k")
    p.add_argument("--dest", type=Path, help=f"target directory (default ${DATA_DIR_ENV} or ~/.cache/safebocp)")
    p.add_argument("--url", help="archive URL override")
    p.add_argument("--md5", help="expected archive MD5 (default: published digest)")

    p = sub.add_parser("inspect", help="show a config's effective values or a results directory")
    p.add_argument("path", type=Path, help="TOML config or results directory")
    p.add_argument("--replay", type=int, metavar="INDEX",
                   help="re-run trial INDEX from the manifest and compare byte-for-byte")
    return parser


def _fmt(x, spec=".4f"):
    if x is None:
        return "-"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(x, spec)


def summary_table(result) -> str:
    header = f"{'sweep point':<40} {'algorithm':<12} {'n':>5} {'viol':>8} {'alpha':>6} {'guarantee':>9} {'ratio':>8} {'failed':>6}"
    lines = [header, "-" * len(header)]
    for a in result.aggregates:
        point = ", ".join(f"{k}={v}" for k, v in a.point.items()) or "(base)"
        verdict = {True: "PASS", False: "FAIL", None: "-"}[a.guarantee_ok]
        lines.append(
            f"{point:<40} {a.algorithm:<12} {a.n_trials:>5} {_fmt(a.violation_mean):>8} "
            f"{_fmt(a.alpha, '.3g'):>6} {verdict:>9} {_fmt(a.ratio_mean):>8} {a.n_failed:>6}"
        )
    return "\n".join(lines)


def _check_writable(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()


def _cmd_experiment(args, sweep: bool) -> int:
    overrides = dict(seed=args.seed, replications=args.replications, full=args.full, jobs=args.jobs,
                     out=str(args.out) if args.out else None)
    config = parse_config(args.config, **overrides)
    if not sweep:
        config = replace(config, sweep=SweepAxes())
    out = Path(config.out)
    _check_writable(out)
    result = run_sweep(config)
    persist(result, out)
    print(summary_table(result))
    print(f"\nresults written to {out}")
    if result.guarantee_violations or result.n_failed:
        print(f"{result.guarantee_violations} guarantee violation(s), {result.n_failed} failed trial(s)",
              file=sys.stderr)
        return EXIT_GUARANTEE
    return EXIT_OK


def _cmd_fetch(args) -> int:
    res = fetch(args.dataset, dest=args.dest, url=args.url, md5=args.md5)
    print(f"{'downloaded' if res.downloaded else 'verified existing copy'}: {res.path}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    path = args.path
    if path.is_dir():
        manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
        if args.replay is not None:
            replayed, stored = replay_trial(path, args.replay)
            same = replayed == stored
            print(f"trial {args.replay}: {'identical' if same else 'MISMATCH'}")
            return EXIT_OK if same else EXIT_GUARANTEE
        print(json.dumps({k: manifest[k] for k in ("software", "summary", "files", "grid")}, indent=2))
        return EXIT_OK
    config = parse_config(path)
    print(json.dumps(config_to_dict(config), indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    named = getattr(args, "config", None) or getattr(args, "path", None)
    if named is not None and not named.exists():
        print(f"error: no such file or directory: {named}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command in ("run", "sweep"):
            return _cmd_experiment(args, sweep=args.command == "sweep")
        if args.command == "fetch-data":
            return _cmd_fetch(args)
        return _cmd_inspect(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChecksumError, FetchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
