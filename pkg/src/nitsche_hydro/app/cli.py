"""Command-line driver: configure, run a benchmark, write history and snapshots."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from threadpoolctl import threadpool_limits

from ..integrator import RunResult, TimeStepError, run
from ..mesh import MeshError, TangledElementError
from ..operators import SolverError
from ..physics import ThermodynamicStateError
from .config import PROBLEMS, ConfigError, RunConfig
from .output import HistoryWriter, history_row, make_snapshot, write_vtk
from .problems import Problem, build_problem

log = logging.getLogger("nitsche_hydro")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass
class RunOutcome:
    problem: Problem
    result: RunResult
    history: HistoryWriter
    files: list[Path] = field(default_factory=list)


def simulate(cfg: RunConfig, write_files: bool = True, problem: Problem | None = None) -> RunOutcome:
    """Build the configured problem, run it and (optionally) write its outputs."""
    prob = problem or build_problem(cfg)
    history = HistoryWriter()
    outdir = Path(cfg.output_dir)
    files: list[Path] = []

    def record(state, op):
        history.append(history_row(state, op, prob.origin, prob.angle_range,
                                   cfg.shock_rays, cfg.shock_samples))
        log.info("step %d t=%.6g dt=%.3e E=%.15g", state.step_count, state.t, state.dt,
                 history.rows[-1]["etotal"])

    if write_files and "vtk" in cfg.formats:
        files.append(write_vtk(make_snapshot(prob.state, prob.op), prob.spaces,
                               outdir / "snapshot_initial.vtk"))
    result = run(prob.state, prob.op, prob.controls, hooks=[record],
                 output_every=cfg.output_every)
    if write_files:
        outdir.mkdir(parents=True, exist_ok=True)
        if "csv" in cfg.formats:
            files.append(history.write(outdir / "history.csv"))
        if "vtk" in cfg.formats:
            files.append(write_vtk(make_snapshot(result.state, prob.op), prob.spaces,
                                   outdir / "snapshot_final.vtk"))
        (outdir / "config.txt").write_text(cfg.to_text())
    return RunOutcome(prob, result, history, files)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nitsche-hydro",
        description="Lagrangian hydrodynamics with weakly imposed slip walls.")
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--order", type=int, help="kinematic polynomial degree k")
    p.add_argument("--res", type=int, help="mesh resolution")
    p.add_argument("--tfinal", type=float, help="final time")
    p.add_argument("--bc", choices=("weak", "strong_axis_aligned"))
    p.add_argument("--output-dir", type=str)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--validate-config", nargs="?", const="only", choices=("only",),
                   help="parse and validate the configuration, then exit")
    p.add_argument("--figures", action="store_true",
                   help="render report figures next to the CSV output")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    flag_keys = {"problem": args.problem, "order": args.order, "res": args.res,
                 "t_final": args.tfinal, "bc": args.bc, "output_dir": args.output_dir}
    text = [f"{k} = {v}" for k, v in flag_keys.items() if v is not None]
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        text.append(item)
    return RunConfig.from_text("\n".join(text), base=cfg)


def _thread_count() -> int | None:
    raw = os.environ.get("HYDRO_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HYDRO_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"HYDRO_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        threads = _thread_count()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate_config:
        print(cfg.to_text(), end="")
        return EXIT_OK
    try:
        with threadpool_limits(limits=threads):
            outcome = simulate(cfg)
    except (TimeStepError, TangledElementError, SolverError, FloatingPointError,
            ThermodynamicStateError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (MeshError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.figures:
        from .report import render_report
        outcome.files.extend(render_report(outcome, Path(cfg.output_dir)))
    for f in outcome.files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
