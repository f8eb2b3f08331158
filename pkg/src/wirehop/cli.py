"""Command-line entry point: ``wirehop <simulate|analyze|plot|workspace|apex>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_UNWRITABLE = 4

log = logging.getLogger("wirehop")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wirehop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a closed-loop hopping simulation")
    sim.add_argument("--config", type=Path)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--duration", type=float)
    sim.add_argument("--out", type=Path, default=Path("trajectory.csv"))
    sim.add_argument("--command-height", type=float, help="commanded CoG jump height [m]")
    sim.add_argument("--noise", type=float, help="sensor noise scale (0 = noiseless)")

    an = sub.add_parser("analyze", help="jump metrics of a trajectory CSV")
    an.add_argument("log", type=Path)
    an.add_argument("--out", type=Path, help="write metrics JSON here")

    pl = sub.add_parser("plot", help="SVG plots of a trajectory CSV")
    pl.add_argument("log", type=Path)
    pl.add_argument("--out", type=Path, default=Path("plots"))

    ws = sub.add_parser("workspace", help="tension feasibility over the joint box")
    ws.add_argument("--config", type=Path)
    ws.add_argument("--grid", type=int, default=9)
    ws.add_argument("--out", type=Path, help="write the per-cell report as CSV")

    ap = sub.add_parser("apex", help="ballistic apex height for a takeoff speed")
    ap.add_argument("speed", type=float, help="takeoff speed [m/s]")
    ap.add_argument("--gravity", type=float, default=9.81)
    return p


def _metrics_dict(m) -> dict:
    return {
        "cog_takeoff_height": m.cog_takeoff_height,
        "cog_apex_height": m.cog_apex_height,
        "cog_jump_height": m.cog_jump_height,
        "hop_count": m.hop_count,
        "takeoff_speed": m.takeoff_speed,
        "fall_detected": m.fall_detected,
        "hops": [{"takeoff_time": h.takeoff_time, "jump_height": h.jump_height,
                  "takeoff_speed": h.takeoff_speed} for h in m.hops],
    }


def _simulate(args) -> int:
    from .harness import analyze_jump, build_experiment, run_experiment
    from .params import ConfigError
    from .sim import DivergenceError

    overrides = {}
    if args.command_height is not None:
        overrides["controller__command_height"] = args.command_height
    if args.noise is not None:
        overrides["sim__noise_scale"] = args.noise
    try:
        exp = build_experiment(args.config, **overrides)
        if args.duration is not None and not 0.0 <= args.duration <= 300.0:
            raise ConfigError("duration must be within [0, 300] s")
    except (ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        result = run_experiment(exp, args.seed, args.duration)
    except DivergenceError as exc:
        log.error("simulation diverged: %s", exc)
        return EXIT_DIVERGED
    try:
        result.to_csv(args.out)
    except OSError as exc:
        log.error("cannot write %s: %s", args.out, exc)
        return EXIT_UNWRITABLE
    m = analyze_jump(result)
    print(f"wrote {len(result)} rows to {args.out}; hops={m.hop_count} "
          f"best CoG jump={m.cog_jump_height:.3f} m fall={m.fall_detected}")
    if m.fall_detected:
        log.warning("fall detected; controller switched to stop")
    return EXIT_OK


def _load_log(path):
    from .harness import TrajectoryLog
    return TrajectoryLog.from_csv(path)


def _analyze(args) -> int:
    from .harness import analyze_jump
    try:
        result = _load_log(args.log)
    except (OSError, ValueError) as exc:
        log.error("cannot read log: %s", exc)
        return EXIT_CONFIG
    text = json.dumps(_metrics_dict(analyze_jump(result)), indent=2)
    if args.out:
        try:
            args.out.write_text(text + "\n")
        except OSError as exc:
            log.error("cannot write %s: %s", args.out, exc)
            return EXIT_UNWRITABLE
    print(text)
    return EXIT_OK


def _plot(args) -> int:
    from .harness import emit_plots
    try:
        result = _load_log(args.log)
    except (OSError, ValueError) as exc:
        log.error("cannot read log: %s", exc)
        return EXIT_CONFIG
    try:
        files = emit_plots(result, args.out)
    except OSError as exc:
        log.error("cannot write plots: %s", exc)
        return EXIT_UNWRITABLE
    for f in files:
        print(f)
    return EXIT_OK


def _workspace(args) -> int:
    from .geometry import GeometryModel, check_workspace
    from .harness import build_experiment
    from .params import ConfigError
    try:
        exp = build_experiment(args.config)
        if args.grid < 2:
            raise ConfigError("grid must be >= 2")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    report = check_workspace(GeometryModel.from_params(exp.params), exp.params, args.grid)
    if args.out:
        try:
            report.to_csv(args.out)
        except OSError as exc:
            log.error("cannot write %s: %s", args.out, exc)
            return EXIT_UNWRITABLE
    print(f"{len(report.points)} cells, {report.n_infeasible} infeasible")
    for q, *_ in report.infeasible:
        print(f"  infeasible at roll={q[0]:+.3f} pitch={q[1]:+.3f} slide={q[2]:.3f}")
    return EXIT_OK


def _apex(args) -> int:
    from .harness import theoretical_apex
    try:
        print(f"{theoretical_apex(args.speed, args.gravity):.4f}")
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    handlers = {"simulate": _simulate, "analyze": _analyze, "plot": _plot,
                "workspace": _workspace, "apex": _apex}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
