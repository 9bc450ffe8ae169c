"""Reduced models: the averaged slow system and the boundary layer.

The slow system lives on the ``m`` cluster aggregates in slow time ``t_s``;
its generator ``A_av`` is the long-run time average of ``A11(t_f, 0)``.
The boundary layer is the disagreement dynamics ``dz_f/dt_f = A22(t_f, 0) z_f``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .assumptions import AssumptionReport, c_internal_series
from .decomposition import Decomposer, TimeRescaling, fast_time_map, PROBE_EPS
from .integrate import AggregationPath, SolverOptions, Trajectory, integrate
from .network import NetworkSpec

__all__ = [
    "AveragedModel",
    "default_window",
    "averaging_horizon",
    "average_A11",
    "slow_weights",
    "simulate_slow",
    "simulate_boundary_layer",
]

PERIODS = 16
APERIODIC_WINDOW = 100.0
POINTS_PER_UNIT = 64
MIN_POINTS = 4001
A4_RTOL = 1e-4


@dataclass(frozen=True)
class AveragedModel:
    """Averaged slow generator and the evidence behind it.

    ``residual`` is the largest discrepancy among the four window averages
    (two anchors times two lengths); ``a4_holds`` compares it with
    ``1e-4 * ||A_av||_inf``.
    """

    A_av: np.ndarray
    window: float
    residual: float
    a_s: np.ndarray
    anchors: tuple[float, float]
    a4_holds: bool

    @property
    def m(self) -> int:
        return self.A_av.shape[0]


def default_window(spec: NetworkSpec, rescaling: TimeRescaling | None = None) -> float:
    """Sixteen base periods in fast time, or 100 fast-time units without a period."""
    if spec.period is None:
        return APERIODIC_WINDOW
    if rescaling is None:
        rescaling = fast_time_map(spec, t_max=spec.period)
    return PERIODS * float(rescaling.fast(spec.period) - rescaling.fast(0.0))


def averaging_horizon(window: float) -> float:
    """Largest fast time the averaging windows touch (anchor ``T/3`` plus ``T``)."""
    return window * 4.0 / 3.0


def _window_average(values_fn, a: float, T: float) -> np.ndarray:
    points = max(MIN_POINTS, int(T * POINTS_PER_UNIT) | 1)
    s = np.linspace(a, a + T, points)
    return simpson(values_fn(s), x=s, axis=0) / T


def _rescaling_for(spec: NetworkSpec, tf_needed: float, report=None) -> TimeRescaling:
    c_floor = float(np.min(c_internal_series(spec, np.linspace(0, max(spec.horizon, 1.0), 2001))))
    if not c_floor > 0:
        raise ValueError("c^I vanishes; fast time is undefined")
    t_max = 1.05 * tf_needed / c_floor + 1e-9
    rescaling = fast_time_map(spec, report, resolution=max(4000, int(200 * t_max)), t_max=t_max)
    while rescaling.tf_max < tf_needed:
        t_max *= 1.5
        rescaling = fast_time_map(spec, report, resolution=max(4000, int(200 * t_max)),
                                  t_max=t_max)
    return rescaling


def _decomposer(spec, rescaling, weights=None) -> Decomposer:
    if weights is None:
        weights = AggregationPath(spec, 0.0, rescaling.t_max)
    return Decomposer(spec, weights, rescaling)


def average_A11(spec: NetworkSpec, rescaling: TimeRescaling | None = None, T: float | None = None,
                probe_eps: float = PROBE_EPS, weights=None,
                report: AssumptionReport | None = None) -> AveragedModel:
    """Estimate ``A_av`` by window averages of ``A11(s, 0)``.

    Averages are taken over ``[0, T]``, ``[0, T/2]``, ``[T/3, 4T/3]`` and
    ``[T/3, 5T/6]``.  ``A_av`` is the first; the residual is the largest
    pairwise gap.  If ``report`` is given its A4 fields are filled in.

    Raises
    ------
    UnstableLimitError
        If the external weights do not scale with ``eps``.
    """
    T = default_window(spec, rescaling) if T is None else float(T)
    if not T > 0:
        raise ValueError("averaging window must be positive")
    if rescaling is None or rescaling.tf_max < averaging_horizon(T):
        rescaling = _rescaling_for(spec, averaging_horizon(T), report)
    dec = _decomposer(spec, rescaling, weights)
    fn = lambda s: dec.rescaled_stacks(s, 0.0, probe=probe_eps)[0]
    avgs = [_window_average(fn, anchor, length)
            for anchor, length in ((0.0, T), (0.0, T / 2), (T / 3, T), (T / 3, T / 2))]
    residual = max(float(np.abs(p - q).sum(axis=1).max()) for p in avgs for q in avgs)
    A_av = avgs[0]
    scale = float(np.abs(A_av).sum(axis=1).max())
    holds = residual <= A4_RTOL * scale if scale > 0 else residual <= 1e-12
    a_s = A_av - np.diag(np.diag(A_av))
    if report is not None:
        report.a4_holds = bool(holds)
        report.a4_residual = residual
    return AveragedModel(A_av, T, residual, a_s, (0.0, T / 3), bool(holds))


def slow_weights(spec: NetworkSpec, q_per_cluster, rescaling: TimeRescaling, grid) -> np.ndarray:
    """Time average over the fast-time ``grid`` of
    ``sum_{i in C_k, j in C_l} q_i a_ij / (c^I eps)`` with the declared ``eps``.

    ``q_per_cluster`` is an :class:`AggregationPath` or constant vectors.
    The diagonal is zero.
    """
    grid = np.asarray(grid, dtype=float)
    t = rescaling.psi(grid)
    A = spec.adjacency(t)
    cI = c_internal_series(spec, t)
    if isinstance(q_per_cluster, AggregationPath):
        qs = q_per_cluster.q(t)
    else:
        qs = [np.broadcast_to(np.asarray(q, float), t.shape + np.shape(q)) for q in q_per_cluster]
    part = spec.partition
    m = part.m
    summand = np.zeros((len(t), m, m))
    for k in range(m):
        rows = A[:, part.slice(k), :]
        weighted = np.einsum("ti,tij->tj", qs[k], rows)
        for l in range(m):
            if l != k:
                summand[:, k, l] = weighted[:, part.slice(l)].sum(axis=1)
    summand /= (cI * spec.eps)[:, None, None]
    span = grid[-1] - grid[0]
    return simpson(summand, x=grid, axis=0) / span


def simulate_slow(model: AveragedModel, y0, ts_horizon: float,
                  opts: SolverOptions | None = None) -> Trajectory:
    """Solve ``dy_s/dt_s = A_av y_s`` on ``[0, ts_horizon]``."""
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (model.m,):
        raise ValueError(f"y0 must have length {model.m}")
    return integrate(model.A_av, y0, 0.0, float(ts_horizon), opts)


def simulate_boundary_layer(spec: NetworkSpec, rescaling: TimeRescaling, z0, tf_horizon: float,
                            opts: SolverOptions | None = None, weights=None) -> Trajectory:
    """Solve ``dz_f/dt_f = A22(t_f, 0) z_f`` on ``[0, tf_horizon]``."""
    z0 = np.asarray(z0, dtype=float)
    dim = spec.n - spec.m
    if z0.shape != (dim,):
        raise ValueError(f"z0 must have length {dim}")
    if rescaling.tf_max < tf_horizon * (1 - 1e-12):
        raise ValueError("rescaling table does not reach tf_horizon")
    if dim == 0:
        times = np.array([0.0, float(tf_horizon)])
        return Trajectory(times, np.zeros((2, 0)), {"method": "trivial"}, np.zeros((2, 0)))
    dec = _decomposer(spec, rescaling, weights)
    return integrate(dec.boundary_layer_generator(), z0, 0.0, float(tf_horizon), opts)
