"""Command-line front end: ``run``, ``plotdata``, and ``validate``.

Exit codes:
  0  success
  2  usage error (bad flags or malformed flag values)
  3  missing or unreadable input (paths are named in the diagnostic)
  4  invalid or infeasible scenario / run content

``--out`` and ``--run`` paths are resolved as given when absolute; relative
paths are joined under ``$UAVNET_OUT_ROOT`` when that variable is set, else
under the current directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .clustering import InfeasibilityError
from .orchestrator import SCHEMES
from .reporting import (
    POWER_SWEEP_DBM,
    ReportInputError,
    default_budgets,
    emit_plotdata,
    execute_run,
)
from .scenario import (
    ScenarioFormatError,
    ScenarioValidationError,
    load_scenario,
    validate_scenario,
    watts_to_dbm,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4


def parse_seed_spec(spec: str) -> list[int]:
    """Comma list of integers and ``a..b`` inclusive ranges, e.g. ``1..3,9``."""
    seeds: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            raise ValueError("empty seed entry")
        if ".." in part:
            lo_text, hi_text = part.split("..", 1)
            lo, hi = int(lo_text), int(hi_text)
            if hi < lo:
                raise ValueError(f"descending seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    return seeds


def parse_scheme_spec(spec: str) -> list[str]:
    if spec.strip() == "all":
        return list(SCHEMES)
    schemes = [s.strip() for s in spec.split(",") if s.strip()]
    if not schemes:
        raise ValueError("no schemes given")
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"unknown scheme {s!r}; expected one of {SCHEMES}")
    return schemes


def _resolve_out(path_text: str) -> Path:
    path = Path(path_text)
    if path.is_absolute():
        return path
    root = os.environ.get("UAVNET_OUT_ROOT")
    if root:
        return Path(root) / path
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavnet",
        description="UAV-served downlink simulator and max-min optimizer",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute scheme x seed missions")
    p_run.add_argument("--scenario", required=True, help="scenario file path")
    p_run.add_argument("--schemes", default="all",
                       help="comma list or 'all' (default: all)")
    p_run.add_argument("--seeds", default="0",
                       help="comma list with a..b ranges (default: 0)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_plot = sub.add_parser("plotdata", help="emit figure-analog CSVs and PNGs")
    p_plot.add_argument("--run", required=True, dest="run_dir",
                        help="completed run directory")
    p_plot.add_argument("--out", default=None,
                        help="plot output directory (default: <run>/plots)")
    p_plot.add_argument("--power-dbm",
                        default=",".join(str(p) for p in POWER_SWEEP_DBM),
                        help="power sweep points in dBm")
    p_plot.add_argument("--budgets", default=None,
                        help="serving-slot budgets, comma list with a..b ranges")
    p_plot.add_argument("--no-sweeps", action="store_true",
                        help="skip the outage and power sweep figures")
    p_plot.set_defaults(func=cmd_plotdata)

    p_val = sub.add_parser("validate", help="lint a scenario file")
    p_val.add_argument("--scenario", required=True, help="scenario file path")
    p_val.set_defaults(func=cmd_validate)
    return parser


def cmd_run(args) -> int:
    schemes = parse_scheme_spec(args.schemes)
    seeds = parse_seed_spec(args.seeds)
    out_dir = _resolve_out(args.out)
    manifest = execute_run(args.scenario, schemes, seeds, out_dir)
    combos = len(schemes) * len(seeds)
    print(f"wrote {combos} scheme x seed result set(s) under {manifest.out_dir}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    run_dir = _resolve_out(args.run_dir)
    if not Path(run_dir).is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    power = [float(p) for p in args.power_dbm.split(",") if p.strip()]
    budgets = parse_seed_spec(args.budgets) if args.budgets is not None else None
    out_dir = _resolve_out(args.out) if args.out is not None else None
    written = emit_plotdata(run_dir, out_dir=out_dir, power_dbm=power,
                            budgets=budgets, sweeps=not args.no_sweeps)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario)
    validate_scenario(cfg)
    slots = cfg.slot_count()
    x0, y0, h0 = cfg.start_pose()
    print(f"scenario OK: {args.scenario}")
    print(f"  users={cfg.n_users} mission_slots={slots} "
          f"slot_duration={cfg.slot_duration} s")
    print(f"  area x={cfg.area_x_bounds} y={cfg.area_y_bounds} "
          f"altitude={cfg.altitude_bounds} m")
    print(f"  power total={watts_to_dbm(cfg.p_total_max):.6g} dBm "
          f"per-user={watts_to_dbm(cfg.p_user_max):.6g} dBm "
          f"bandwidth={cfg.b_total_max:.6g} Hz")
    print(f"  start_pose=({x0:.6g}, {y0:.6g}, {h0:.6g}) "
          f"seed={cfg.rng_seed}")
    if cfg.tau_slots is not None or cfg.c_max_users is not None:
        print(f"  service capacity overrides: tau={cfg.tau_slots} "
              f"c_max={cfg.c_max_users}")
        print(f"  outage sweep default budgets: {default_budgets(cfg)[0]}.."
              f"{default_budgets(cfg)[-1]}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValueError as exc:
        if isinstance(exc, (ScenarioFormatError, ScenarioValidationError)):
            print(f"uavnet: invalid scenario: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        print(f"uavnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibilityError as exc:
        print(f"uavnet: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ReportInputError, FileNotFoundError) as exc:
        print(f"uavnet: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"uavnet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
