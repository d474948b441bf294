"""Command line entry point: run, validate, convergence.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import ConfigurationError, NumericalFailure


def _read_threads_cap() -> int:
    raw = os.environ.get("ENGINE_THREADS", "")
    if not raw:
        return 0
    try:
        val = int(raw)
        if val < 0:
            raise ValueError
    except ValueError:
        raise ConfigurationError(
            f"ENGINE_THREADS must be a non-negative integer, got '{raw}'"
        ) from None
    return val


def _cmd_run(args) -> int:
    from .driver import parse_config_file, run

    cfg = parse_config_file(args.config)
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if args.vtk_every is not None:
        cfg.vtk_every = args.vtk_every
    threads = _read_threads_cap()
    report = run(cfg, max_steps=args.max_steps, quiet=args.quiet)
    if not args.quiet:
        print(report.summary())
        if threads > 1:
            print(f"note: ENGINE_THREADS={threads} requested; kernels run "
                  "vectorised on a single worker")
    return 0


def _cmd_validate(args) -> int:
    from .driver import parse_config_file
    from .driver.scenarios import make_scenario

    cfg = parse_config_file(args.config)
    scn = make_scenario(cfg)
    print(f"config ok: project '{cfg.project}', scenario '{cfg.scenario}', "
          f"system '{scn.system.name}', order {cfg.order}, "
          f"solver {cfg.solver_kind}")
    return 0


def _cmd_convergence(args) -> int:
    from .driver import parse_config_file
    from .driver.loop import l1_error, run_with_state
    from .driver.scenarios import make_scenario
    from .mesh import DomainBox, derive_base_dims

    cfg = parse_config_file(args.config)
    scn = make_scenario(cfg)
    if scn.exact is None:
        raise ConfigurationError(
            f"scenario '{cfg.scenario}' has no analytical solution; "
            "convergence tables need one"
        )
    base = cfg.base_dims
    if base is None:
        base = derive_base_dims(DomainBox(cfg.offset, cfg.width), cfg.maximum_mesh_size)
    print(f"{'cells':>12} {'L1 error':>14} {'order':>8}")
    prev = None
    for lvl in range(args.levels):
        cfg.base_dims = tuple(b * 3**lvl for b in base)
        cfg.vtk_every = 0.0
        cfg.probes = []
        _, state = run_with_state(cfg, write_outputs=False)
        err = float(l1_error(state)[0])
        cells = "x".join(str(b) for b in cfg.base_dims)
        order = f"{np.log(prev / err) / np.log(3.0):8.3f}" if prev else " " * 8
        print(f"{cells:>12} {err:14.6e} {order}")
        prev = err
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="engine",
        description="ADER-DG hyperbolic PDE engine with a-posteriori "
        "finite-volume subcell limiting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a simulation from a specification file")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--max-steps", type=int, default=None)
    p_run.add_argument("--vtk-every", type=float, default=None)
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="parse and report a specification file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_conv = sub.add_parser(
        "convergence", help="run a tripartitioned grid sequence and print orders"
    )
    p_conv.add_argument("config")
    p_conv.add_argument("--levels", type=int, default=3)
    p_conv.set_defaults(func=_cmd_convergence)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
