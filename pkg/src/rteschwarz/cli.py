"""Command-line front end for the experiment drivers.

Exit codes: 0 success, 2 configuration error, 3 solver nonconvergence,
4 cache error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .cache import CacheError
from .config import ConfigError, ExperimentConfig, load_config, validate_config
from .transport import NonconvergenceError
from . import experiments


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file (defaults are used otherwise)")
    p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    p.add_argument("--out", metavar="DIR", help="override the output directory")


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rteschwarz",
        description="Schwarz solver for the steady 1+1D radiative transfer equation "
                    "with offline low-rank compression of the local solution maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reference", help="converged reference solve plus direct cross-check")
    _add_common(p)

    p = sub.add_parser("offline", help="build and persist the compressed local maps")
    _add_common(p)

    p = sub.add_parser("run", help="online Schwarz run")
    _add_common(p)
    p.add_argument("--backend", choices=("full", "lowrank"), default="full")
    p.add_argument("--iterations", type=int, default=None,
                   help="run exactly this many iterations instead of using tau")

    p = sub.add_parser("spectrum", help="singular values of a local map")
    _add_common(p)
    p.add_argument("--map", dest="which", choices=("S", "Ss", "P"), required=True)
    p.add_argument("--subdomain", type=int, required=True, metavar="M")

    p = sub.add_parser("rank-sweep", help="error and timing across compression ranks")
    _add_common(p)
    p.add_argument("--ranks", default="2,3,4,5,6",
                   help="comma-separated ranks (default 2,3,4,5,6)")

    p = sub.add_parser("homog-check", help="oscillatory vs homogenized media comparison")
    _add_common(p)
    p.add_argument("--deltas", default="0.111111111111111,0.037037037037037,0.012345679012346",
                   help="comma-separated oscillation periods (default 1/9,1/27,1/81)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "reference":
            res = experiments.cmd_reference(cfg)
            print(f"reference: {res.iterations} iterations, trace change {res.trace_change:.3e}, "
                  f"gap to direct solve {res.direct_gap:.3e}, field at {res.path}")
            if not res.converged:
                print("reference did not reach tau_ref", file=sys.stderr)
                return 3
        elif args.command == "offline":
            path = experiments.cmd_offline(cfg)
            print(f"offline: wrote {cfg.m_count} maps of rank {cfg.rank} to {path}")
        elif args.command == "run":
            res = experiments.cmd_run(cfg, args.backend, iterations=args.iterations)
            print(f"run[{args.backend}]: {res.run.state.t} iterations, "
                  f"final relative error {res.final_error:.3e}")
            if args.iterations is None and not res.run.state.converged:
                print("run did not reach tau", file=sys.stderr)
                return 3
        elif args.command == "spectrum":
            sv = experiments.cmd_spectrum(cfg, args.which, args.subdomain)
            print(f"spectrum[{args.which}, m={args.subdomain}]: {sv.size} values, "
                  f"sigma_10/sigma_1 = {sv[9] if sv.size > 9 else float('nan'):.3e}")
        elif args.command == "rank-sweep":
            ranks = [int(r) for r in args.ranks.split(",") if r.strip()]
            rows = experiments.cmd_rank_sweep(cfg, ranks)
            for r, err in rows:
                print(f"rank {r}: relative error {err:.4e}")
        elif args.command == "homog-check":
            deltas = [float(d) for d in args.deltas.split(",") if d.strip()]
            rows = experiments.cmd_homog_check(cfg, deltas)
            for d, err in rows:
                print(f"delta {d:.6g}: relative difference {err:.4e}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CacheError as e:
        print(f"cache error: {e}", file=sys.stderr)
        if "fingerprint" in str(e) or "rebuild" in str(e):
            print("hint: re-run the offline command for the current configuration",
                  file=sys.stderr)
        return 4
    except NonconvergenceError as e:
        print(f"solver nonconvergence: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
