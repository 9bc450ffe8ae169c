"""End-to-end approximation studies over a sweep of ``eps``.

For each ``eps`` the full network is simulated, mapped to aggregate and
disagreement coordinates, and compared on a common fast-time grid with the
averaged slow system and the boundary layer started from the same initial
split.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from pathlib import Path

import numpy as np

from .assumptions import AssumptionReport, check_assumptions
from .decomposition import Decomposer, split_state
from .integrate import AggregationPath, SolverOptions, Trajectory, integrate, write_csv
from .network import NetworkSpec, dump_config, paper_example
from .plotting import PALETTE, Series, emit_plot
from .reduced import (AveragedModel, _rescaling_for, average_A11, simulate_boundary_layer,
                      simulate_slow)

__all__ = [
    "AssumptionFailure",
    "EpsRun",
    "ApproximationReport",
    "default_slow_horizon",
    "run_to_consensus",
    "run_study",
    "emit_csv",
    "emit_plot",
    "reproduce_paper",
    "EXAMPLE_EPS",
]

EXAMPLE_EPS = (1.0, 0.2, 0.04)
GRID = 2000
TS_CAP = 20.0
SPREAD_DROP = 0.01
CONSENSUS_TOL = 1e-4
MONOTONE_SLACK = 0.95


class AssumptionFailure(RuntimeError):
    """A required assumption fails; ``report`` carries the witnesses."""

    def __init__(self, message: str, report: AssumptionReport):
        super().__init__(message)
        self.report = report


@dataclass
class EpsRun:
    """Sampled comparison for one ``eps`` on the fast-time grid ``tf``."""

    eps: float
    tf: np.ndarray
    y_hat: np.ndarray
    y_s: np.ndarray
    z_hat: np.ndarray
    z_f: np.ndarray
    report: AssumptionReport

    @property
    def ts(self) -> np.ndarray:
        return self.eps * self.tf

    @property
    def err_y(self) -> float:
        return float(np.max(np.abs(self.y_hat - self.y_s))) if self.y_hat.size else 0.0

    @property
    def err_z(self) -> float:
        return float(np.max(np.abs(self.z_hat - self.z_f))) if self.z_hat.size else 0.0


@dataclass
class ApproximationReport:
    eps_values: list[float]
    sup_err_y: list[float]
    sup_err_z: list[float]
    consensus_value: list[float]
    consensus_spread: list[float]
    consensus_time: list[float]
    horizon_ts: float
    tf_horizons: list[float]
    grid_size: int
    A_av: np.ndarray
    a4_residual: float
    a4_holds: bool
    final_z_hat: list[float]
    final_z_f: list[float]
    consensus_z: list[float]
    runs: list[EpsRun] = field(default_factory=list, repr=False)

    def decreasing(self, which: str = "y", slack: float = MONOTONE_SLACK) -> bool:
        """Errors in the order of ``eps_values`` (largest eps first) shrink by ``slack``."""
        order = np.argsort(self.eps_values)[::-1]
        errs = np.asarray(self.sup_err_y if which == "y" else self.sup_err_z)[order]
        return bool(np.all(errs[1:] <= slack * errs[:-1]))

    def to_dict(self) -> dict:
        return {
            "eps_values": list(map(float, self.eps_values)),
            "sup_err_y": self.sup_err_y,
            "sup_err_z": self.sup_err_z,
            "consensus_value": self.consensus_value,
            "consensus_spread": self.consensus_spread,
            "consensus_time": self.consensus_time,
            "horizon_ts": self.horizon_ts,
            "tf_horizons": self.tf_horizons,
            "grid": {"size": self.grid_size, "kind": "uniform in fast time, sup = grid maximum"},
            "A_av": self.A_av.tolist(),
            "a4_residual": self.a4_residual,
            "a4_holds": self.a4_holds,
            "final_z_hat": self.final_z_hat,
            "final_z_f": self.final_z_f,
            "consensus_z": self.consensus_z,
            "errors_decreasing": {"y": self.decreasing("y"), "z": self.decreasing("z")},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _spread(x: np.ndarray) -> float:
    return float(np.max(x) - np.min(x)) if x.size else 0.0


def default_slow_horizon(model: AveragedModel, y0, cap: float = TS_CAP) -> float:
    """First slow time at which the slow spread is below 1% of its start, at most ``cap``."""
    s0 = _spread(np.asarray(y0))
    if s0 == 0 or model.m == 1:
        return 1.0
    traj = simulate_slow(model, y0, cap)
    spread = traj.spread()
    below = np.nonzero(spread <= SPREAD_DROP * s0)[0]
    return float(traj.times[below[0]]) if below.size else cap


def run_to_consensus(spec: NetworkSpec, x0, t_guess: float, tol: float = CONSENSUS_TOL,
                     max_doublings: int = 8, opts: SolverOptions | None = None):
    """Integrate until the spread of ``x`` drops below ``tol``.

    Runs ``[0, t_guess]`` then keeps extending by doubling the total time.
    Returns ``(t_end, x_end)``; the spread may still exceed ``tol`` after
    ``max_doublings``.
    """
    gen = spec.generator()
    t, x, span = 0.0, np.asarray(x0, dtype=float), float(t_guess)
    for _ in range(max_doublings + 1):
        x = integrate(gen, x, t, t + span, opts).final
        t += span
        if _spread(x) < tol:
            break
        span = t
    return t, x


def _require(report: AssumptionReport, eps: float) -> None:
    if report.holds("a1", "a3"):
        return
    failed = [name.upper() for name in ("a1", "a3") if not report.holds(name)]
    lines = [f"assumption {', '.join(failed)} fails for eps={eps:g}"]
    for w in report.witnesses:
        if w.assumption.upper() in failed:
            lines.append(f"  witness {w.assumption.upper()} t={w.t:.6g} "
                         f"cluster={w.cluster} S={list(w.subset)}: {w.detail}")
            break
    raise AssumptionFailure("\n".join(lines), report)


def _compare(spec: NetworkSpec, model: AveragedModel, slow: Trajectory, y0, z0, x0,
             horizon_ts: float, grid: int, opts, report) -> EpsRun:
    tf_end = horizon_ts / spec.eps
    rescaling = _rescaling_for(spec, tf_end, report)
    path = AggregationPath(spec, 0.0, rescaling.t_max)
    dec = Decomposer(spec, path, rescaling)
    tf = np.linspace(0.0, tf_end, grid)
    t = rescaling.psi(tf)
    full = integrate(spec.generator(), x0, 0.0, float(t[-1]), opts)
    x = full.at(t)
    J, _ = dec.JQt(t)
    y_hat = np.einsum("tmi,ti->tm", J, x)
    z_hat = x @ dec.Q.T
    y_s = slow.at(np.minimum(spec.eps * tf, slow.times[-1]))
    bl = simulate_boundary_layer(spec, rescaling, z0, tf_end, opts, weights=path)
    z_f = bl.at(tf) if bl.dim else np.zeros((grid, 0))
    return EpsRun(spec.eps, tf, y_hat, y_s, z_hat, z_f, report)


def run_study(spec: NetworkSpec, eps_list=EXAMPLE_EPS, horizon_ts: float | None = None,
              grid: int = GRID, opts: SolverOptions | None = None,
              consensus_tol: float = CONSENSUS_TOL) -> ApproximationReport:
    """Compare the full system with its reduced models for every ``eps`` in ``eps_list``.

    Every ``eps`` is checked before anything is simulated; a failure of A1 or
    A3 raises :class:`AssumptionFailure` with a witness.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps_list is empty")
    specs = [spec.with_eps(e) for e in eps_list]
    reports = [check_assumptions(s) for s in specs]
    for s, r in zip(specs, reports):
        _require(r, s.eps)

    model = average_A11(specs[0], report=reports[0])
    x0 = np.asarray(spec.x0 if spec.x0 is not None else np.zeros(spec.n), dtype=float)
    q0 = AggregationPath(specs[0], 0.0, 0.0).q(0.0)
    split0 = Decomposer(specs[0], q0).split(0.0)
    y0, z0 = split_state(x0, split0)
    if horizon_ts is None:
        horizon_ts = default_slow_horizon(model, y0)
    slow = simulate_slow(model, y0, horizon_ts, opts)

    Q = Decomposer(specs[0], q0).Q
    runs, values, spreads, times, zs = [], [], [], [], []
    for s, r in zip(specs, reports):
        run = _compare(s, model, slow, y0, z0, x0, horizon_ts, grid, opts, r)
        runs.append(run)
        t_guess = float(run.tf[-1]) / max(r.c_min, 1e-300)
        if r.holds("a2"):
            t_end, x_end = run_to_consensus(s, x0, t_guess, consensus_tol, opts=opts)
        else:
            t_end = t_guess
            x_end = integrate(s.generator(), x0, 0.0, t_end, opts).final
        values.append(float(np.mean(x_end)))
        spreads.append(_spread(x_end))
        times.append(t_end)
        zs.append(float(np.max(np.abs(Q @ x_end))) if Q.size else 0.0)

    return ApproximationReport(
        eps_values=eps_list,
        sup_err_y=[r.err_y for r in runs],
        sup_err_z=[r.err_z for r in runs],
        consensus_value=values,
        consensus_spread=spreads,
        consensus_time=times,
        horizon_ts=float(horizon_ts),
        tf_horizons=[float(r.tf[-1]) for r in runs],
        grid_size=grid,
        A_av=model.A_av,
        a4_residual=model.residual,
        a4_holds=model.a4_holds,
        final_z_hat=[float(np.max(np.abs(r.z_hat[-1]))) if r.z_hat.size else 0.0 for r in runs],
        final_z_f=[float(np.max(np.abs(r.z_f[-1]))) if r.z_f.size else 0.0 for r in runs],
        consensus_z=zs,
        runs=runs,
    )


def emit_csv(trajectory: Trajectory, path, columns=None) -> None:
    """Write a trajectory as ``t,<columns>`` CSV with 17 significant digits."""
    write_csv(trajectory, path, columns)


def _first_disagreement(spec: NetworkSpec) -> list[tuple[int, int]]:
    """``(cluster, z index)`` of the first disagreement variable of each nontrivial cluster."""
    out, offset = [], 0
    for k, nk in enumerate(spec.partition.sizes):
        if nk > 1:
            out.append((k, offset))
        offset += nk - 1
    return out


def _eps_tag(eps: float) -> str:
    return f"{eps:g}"


def write_bundle(spec: NetworkSpec, report: ApproximationReport, outdir) -> list[Path]:
    """Per-eps trajectory CSVs (slow time) and SVG plots plus ``report.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    firsts = _first_disagreement(spec)
    for run in report.runs:
        tag = _eps_tag(run.eps)
        m = run.y_hat.shape[1]
        cols = ([f"y{k + 1}" for k in range(m)] + [f"ys{k + 1}" for k in range(m)]
                + [f"z{j + 1}" for j in range(run.z_hat.shape[1])]
                + [f"zf{j + 1}" for j in range(run.z_f.shape[1])])
        table = np.hstack([run.y_hat, run.y_s, run.z_hat, run.z_f])
        path = outdir / f"trajectories_eps{tag}.csv"
        emit_csv(Trajectory(run.ts, table, {}), path, cols)
        written.append(path)

        agg = []
        for k in range(m):
            agg.append(Series(f"y{k + 1}", run.ts, run.y_hat[:, k], False, _color(k)))
            agg.append(Series(f"y{k + 1} slow", run.ts, run.y_s[:, k], True, _color(k)))
        path = outdir / f"aggregates_eps{tag}.svg"
        emit_plot(agg, path, f"aggregates, eps = {tag}", "slow time t_s", "y")
        written.append(path)

        if firsts:
            dis = []
            for c, (k, j) in enumerate(firsts):
                dis.append(Series(f"z{j + 1} (cluster {k + 1})", run.ts, run.z_hat[:, j], False,
                                  _color(c)))
                dis.append(Series(f"z{j + 1} boundary layer", run.ts, run.z_f[:, j], True,
                                  _color(c)))
            path = outdir / f"disagreement_eps{tag}.svg"
            emit_plot(dis, path, f"first disagreement per cluster, eps = {tag}",
                      "slow time t_s", "z")
            written.append(path)
    path = outdir / "report.json"
    path.write_text(report.to_json() + "\n")
    written.append(path)
    return written


def _color(k: int) -> str:
    return PALETTE[k % len(PALETTE)]


def reproduce_paper(outdir, eps_list=EXAMPLE_EPS, horizon_ts: float | None = None,
                    grid: int = GRID) -> ApproximationReport:
    """Run the built-in eight-agent, two-cluster example and write its artifact bundle."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = paper_example()
    (outdir / "config.toml").write_text(dump_config(spec))
    (outdir / "assumptions.json").write_text(check_assumptions(spec).to_json() + "\n")
    report = run_study(spec, eps_list, horizon_ts, grid)
    write_bundle(spec, report, outdir)
    return report
