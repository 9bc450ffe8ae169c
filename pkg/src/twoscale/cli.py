"""Command line interface: ``twoscale <command> [options]``.

Exit codes: 0 success, 2 assumption failure, 3 solver failure, 4 I/O or
configuration error.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
import sys

import numpy as np

from .assumptions import DEFAULT_GRID, check_assumptions
from .decomposition import Decomposer, UnstableLimitError, fast_time_map, split_state
from .expr import ExprError
from .integrate import AggregationPath, SolverError, SolverOptions, integrate
from .network import SpecError, load_spec, paper_example
from .reduced import average_A11, simulate_boundary_layer, simulate_slow
from .study import (EXAMPLE_EPS, AssumptionFailure, emit_csv, reproduce_paper, run_study,
                    write_bundle)

log = logging.getLogger("twoscale")

EXIT_OK, EXIT_ASSUMPTION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _load(args):
    if args.config is None:
        spec = paper_example()
    else:
        spec = load_spec(Path(args.config).read_text())
    if getattr(args, "eps", None) is not None:
        spec = spec.with_eps(args.eps)
    return spec


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_matrix(path: Path, M: np.ndarray) -> None:
    M = np.atleast_2d(M)
    with path.open("w") as fh:
        for row in M:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def cmd_check(args) -> int:
    spec = _load(args)
    report = check_assumptions(spec, grid_size=args.grid or DEFAULT_GRID)
    if report.a1_holds:
        try:
            average_A11(spec, report=report)
        except UnstableLimitError as exc:
            log.info("A4: %s", exc)
            report.a4_holds, report.a4_residual = False, float("inf")
    print(report.to_json() if args.json else report.to_text())
    names = ("a1", "a2", "a3") + (("a4",) if report.a4_holds is not None else ())
    return EXIT_OK if report.holds(*names) else EXIT_ASSUMPTION


def cmd_simulate(args) -> int:
    spec = _load(args)
    horizon = args.horizon or spec.horizon
    x0 = spec.x0 if spec.x0 is not None else np.zeros(spec.n)
    traj = integrate(spec.generator(), x0, 0.0, horizon,
                     SolverOptions(stride=args.stride, tol=args.tol or 1e-9))
    path = _out(args) / "trajectory.csv"
    labels = [f"x{spec.label(i)}" for i in range(spec.n)]
    emit_csv(traj, path, labels)
    print(f"wrote {path} ({len(traj)} samples); final spread {traj.spread()[-1]:.6g}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    spec = _load(args)
    report = check_assumptions(spec, grid_size=args.grid or DEFAULT_GRID)
    if not report.holds("a1", "a3"):
        print(report.to_text(), file=sys.stderr)
        return EXIT_ASSUMPTION
    times = args.times or [0.0]
    t_end = max(max(times), spec.horizon)
    rescaling = fast_time_map(spec, report, t_max=t_end)
    dec = Decomposer(spec, AggregationPath(spec, 0.0, t_end, tol=args.tol or 1e-10), rescaling)
    out = _out(args)
    for t in times:
        split = dec.split(t)
        blocks = dec.blocks(t, check_bounds=spec.eps < 1 / 8)
        tf = float(rescaling.fast(t))
        scaled = dec.rescaled(tf, spec.eps)
        tag = f"t{t:g}"
        mats = {"J": split.J, "Q": split.Q, "Qt": split.Qt, "H": split.H,
                "A11bar": blocks.A11bar, "A12bar": blocks.A12bar,
                "A21bar": blocks.A21bar, "A22bar": blocks.A22bar,
                "A11": scaled.A11, "A12": scaled.A12, "A21": scaled.A21, "A22": scaled.A22}
        for name, M in mats.items():
            _write_matrix(out / f"{name}_{tag}.csv", M)
        print(f"t={t:g} t_f={tf:.6g} c^I={blocks.cI:.6g}")
        for line in blocks.violations + scaled.violations:
            print(f"  bound violated: {line}")
    print(f"wrote matrices to {out}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    spec = _load(args)
    report = check_assumptions(spec, grid_size=args.grid or DEFAULT_GRID)
    if not report.holds("a1", "a3"):
        print(report.to_text(), file=sys.stderr)
        return EXIT_ASSUMPTION
    model = average_A11(spec, report=report)
    np.set_printoptions(precision=10, suppress=False)
    print("A_av =")
    print(model.A_av)
    print("a_s =")
    print(model.a_s)
    print(f"averaging window T = {model.window:.6g} (fast time); "
          f"A4 residual = {model.residual:.3g} ({'holds' if model.a4_holds else 'FAILS'})")
    x0 = spec.x0 if spec.x0 is not None else np.zeros(spec.n)
    q0 = AggregationPath(spec, 0.0, 0.0).q(0.0)
    y0, z0 = split_state(x0, Decomposer(spec, q0).split(0.0))
    out = _out(args)
    ts = args.horizon or 20.0
    emit_csv(simulate_slow(model, y0, ts), out / "slow.csv",
             [f"y{k + 1}" for k in range(spec.m)])
    if z0.size:
        tf = ts / spec.eps
        rescaling = fast_time_map(spec, report, t_max=1.05 * tf / report.c_min)
        bl = simulate_boundary_layer(spec, rescaling, z0, tf)
        emit_csv(bl, out / "boundary_layer.csv", [f"z{j + 1}" for j in range(z0.size)])
    print(f"wrote reduced trajectories to {out}")
    return EXIT_OK if model.a4_holds else EXIT_ASSUMPTION


def cmd_study(args) -> int:
    spec = _load(args)
    report = run_study(spec, args.eps_list or EXAMPLE_EPS, args.horizon_ts,
                       grid=args.grid or 2000)
    write_bundle(spec, report, _out(args))
    print(report.to_json())
    return EXIT_OK


def cmd_paper(args) -> int:
    out = _out(args)
    report = reproduce_paper(out, args.eps_list or EXAMPLE_EPS, args.horizon_ts,
                             grid=args.grid or 2000)
    print(report.to_json())
    print(f"wrote bundle to {out}")
    return EXIT_OK


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # Subcommands repeat the global flags with suppressed defaults so that a
    # flag given before the subcommand is not reset by the subparser.
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None),
                        help="network TOML file (default: built-in 8-agent example)")
    parser.add_argument("--out", default=d("out"), help="output directory (default: out)")
    parser.add_argument("--grid", type=int, default=d(None),
                        help="sample count for checks or comparisons")
    parser.add_argument("--tol", type=float, default=d(None),
                        help="solver / convergence tolerance")
    parser.add_argument("--seed", type=int, default=d(0),
                        help="seed for randomized fixtures; the pipeline itself is deterministic")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    parser = argparse.ArgumentParser(prog="twoscale",
                                     description="Two time-scale analysis of clustered "
                                                 "consensus networks.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="verify the structural assumptions")
    p.add_argument("--eps", type=float)
    p.add_argument("--json", action="store_true", help="one JSON record per assumption")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", parents=[common], help="integrate the full network")
    p.add_argument("--eps", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--stride", type=int, default=1, help="store every k-th step")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", parents=[common], help="dump split and block matrices")
    p.add_argument("--eps", type=float)
    p.add_argument("--times", type=_floats, help="comma-separated times (default 0)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reduce", parents=[common], help="averaged slow model and boundary layer")
    p.add_argument("--eps", type=float)
    p.add_argument("--horizon", type=float, help="slow-time horizon (default 20)")
    p.set_defaults(func=cmd_reduce)

    for name, func, text in (("study", cmd_study, "approximation errors over an eps sweep"),
                             ("paper", cmd_paper, "reproduce the built-in example bundle")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--eps-list", type=_floats, help="comma-separated eps values")
        p.add_argument("--horizon-ts", type=float, help="slow-time comparison horizon")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AssumptionFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ASSUMPTION
    except (SolverError, UnstableLimitError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, SpecError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
