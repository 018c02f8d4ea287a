"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, RunConfig, builtin, load_config, resolve_dt, scenario_names, validate
from .greens import GreensError
from .integrate import InstabilityError, stable_dt
from .io import FormatError
from .material import MaterialError
from .oracle import OracleError
from .runner import SolverFailure, convergence_study, run_scenario
from .spectral import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("elastowave")


def _config(arg: str) -> RunConfig:
    """A YAML path, or ``builtin:<name>`` for a built-in scenario."""
    if arg.startswith("builtin:"):
        return builtin(arg.split(":", 1)[1])
    return load_config(arg)


def _memory_estimate(cfg: RunConfig) -> dict:
    ms = cfg.microstructure
    dims = ms.get("dims")
    n = int(np.prod(dims)) if dims else 0
    ncomp = 1 if dims and len(dims) == 1 else 3
    # u, v, a, rho plus ~12 half-spectrum PCG work arrays
    fields = 8 * n * ncomp * (3 + 12) + 8 * n
    return {"voxels": n, "field_bytes": fields}


def cmd_run(args) -> int:
    cfg = _config(args.config)
    step_log = None
    if args.verbose:
        def step_log(st, info):
            log.info("step %d t=%.4e iters=%s", st.step, st.t, info.iterations)
    rep = run_scenario(cfg, out_dir=args.out, progress=step_log)
    print(f"scenario {rep.scenario}: {rep.steps} steps, dt={rep.dt:.4e} s, total {rep.total_time:.2f} s")
    print("phases: " + ", ".join(f"{k}={v:.2f}s" for k, v in rep.timings.items()))
    if rep.iterations:
        print(f"CG iterations per step: max {rep.max_iterations}")
    if rep.final_error is not None:
        print(f"final relative L2 error vs d'Alembert: {rep.final_error:.4e}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _config(args.config)
    res = convergence_study(cfg, args.dts, args.convention)
    print(res.table())
    return EXIT_OK if res.complete else EXIT_SOLVER


def cmd_validate(args) -> int:
    cfg = _config(args.config)
    for w in validate(cfg):
        print(f"warning: {w}")
    print("configuration OK")
    return EXIT_OK


def cmd_info(args) -> int:
    from .config import build_microstructure, build_pulse
    cfg = _config(args.config)
    micro = build_microstructure(cfg)
    pulse = build_pulse(cfg, micro)
    dt_spec, dt_fe = stable_dt(micro)
    dt, n = resolve_dt(cfg, micro)
    mem = _memory_estimate(cfg)
    d = micro.ncomp * pulse.manifold.n_points
    print(f"grid            {micro.dims}  lengths {micro.lengths} m")
    print(f"phases          {micro.n_phases}")
    print(f"CFL (fe)        {dt_fe:.4e} s")
    print(f"CFL (spectral)  {dt_spec:.4e} s")
    print(f"dt              {dt:.4e} s  ({dt / dt_fe:.3g} x CFL_fe), {n} steps")
    print(f"manifold        {pulse.manifold.n_points} points, Green matrix {d}x{d} "
          f"({8 * d * d / 2**20:.1f} MiB)")
    print(f"fields          ~{mem['field_bytes'] / 2**20:.1f} MiB")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name in scenario_names():
        print(name)
    return EXIT_OK


def cmd_template(args) -> int:
    sys.stdout.write(builtin(args.name).dump())
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_snapshot
    out = plot_snapshot(args.snapshot, args.out, args.component, args.axis, args.index)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastowave", description="FFT-based elastic wave propagation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("config", help="YAML file or builtin:<name>")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("study", help="temporal convergence study")
    s.add_argument("config")
    s.add_argument("--dts", type=float, nargs="+", required=True, help="dt/CFL multipliers")
    s.add_argument("--convention", choices=("fe", "spectral"), default=None)
    s.set_defaults(func=cmd_study)

    v = sub.add_parser("validate", help="dry-run configuration checks")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("info", help="grid, CFL and memory estimate")
    i.add_argument("config")
    i.set_defaults(func=cmd_info)

    sub.add_parser("scenarios", help="list built-in scenarios").set_defaults(func=cmd_scenarios)
    t = sub.add_parser("template", help="print a built-in scenario as YAML")
    t.add_argument("name")
    t.set_defaults(func=cmd_template)

    pl = sub.add_parser("plot", help="render a snapshot to an image")
    pl.add_argument("snapshot")
    pl.add_argument("--out", required=True)
    pl.add_argument("--component", type=int, default=0)
    pl.add_argument("--axis", type=int, default=None)
    pl.add_argument("--index", type=int, default=None)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MaterialError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, ConvergenceError, InstabilityError, GreensError, OracleError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
