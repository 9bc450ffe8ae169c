"""Integration of linear time-varying systems ``dx/dt = M(t) x``.

The default solver is classical fixed-step RK4.  For a linear right-hand side
one RK4 step is the matrix

    P = I + h/6 (K1 + 2 K2 + 2 K3 + K4),
    K1 = M(t), K2 = M(t+h/2)(I + h/2 K1), K3 = M(t+h/2)(I + h/2 K2),
    K4 = M(t+h)(I + h K3),

so the step matrices for a whole block of steps are built with batched
matrix products and only the product ``x <- P x`` runs in a Python loop.
The arithmetic is the same as stepping RK4 on the vector field.

A right-hand side is a callable ``M(t)`` that accepts a scalar time or a 1-d
array of times and returns an ``(d, d)`` matrix or an ``(len(t), d, d)``
stack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import math
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

__all__ = [
    "SolverError",
    "SolverOptions",
    "Trajectory",
    "FundamentalMatrix",
    "AggregationWeights",
    "AggregationPath",
    "step_size",
    "integrate",
    "fundamental_matrix",
    "compute_q",
    "q_invariant",
    "q_bounds",
    "phi_floor_time",
    "aggregation_weights",
    "aggregation_path",
    "write_csv",
    "read_csv",
]

MAX_STEP = 0.01
STEP_SAFETY = 0.1
BLOCK = 2048
H_MIN = 1e-12


class SolverError(RuntimeError):
    """Integration failed: step underflow or a non-finite state."""


@dataclass(frozen=True)
class SolverOptions:
    method: str = "rk4"
    h: float | None = None
    tol: float = 1e-9
    max_step: float = MAX_STEP
    stride: int = 1

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.h is not None and not self.h > 0:
            raise ValueError("h must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class Trajectory:
    """Sampled solution: ``states[i]`` is the state at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    derivs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t) -> np.ndarray:
        """State at arbitrary times inside the span (cubic Hermite when derivatives exist)."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.times[0], self.times[-1]
        span = max(1.0, abs(hi))
        if np.any(t < lo - 1e-9 * span) or np.any(t > hi + 1e-9 * span):
            raise ValueError("requested time outside the trajectory span")
        t = np.clip(t, lo, hi)
        if len(self.times) == 1:
            return np.broadcast_to(self.states[0], t.shape + (self.dim,)).copy()
        if self.derivs is not None:
            return CubicHermiteSpline(self.times, self.states, self.derivs, axis=0)(t)
        return np.stack([np.interp(t, self.times, self.states[:, i])
                         for i in range(self.dim)], axis=-1)

    def spread(self) -> np.ndarray:
        """Per-sample ``max - min`` over components."""
        return np.ptp(self.states, axis=1)


def _as_callable(M) -> Callable:
    if callable(M):
        return M
    fixed = np.asarray(M, dtype=float)

    def const(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(fixed, t.shape + fixed.shape)

    return const


def _stack(M: Callable, times: np.ndarray) -> np.ndarray:
    out = np.asarray(M(times), dtype=float)
    if out.ndim == 2:
        out = np.broadcast_to(out, (len(times),) + out.shape)
    return out


def step_size(rhs, t0: float, t1: float, max_step: float = MAX_STEP, samples: int = 1001) -> float:
    """Fixed RK4 step ``min(max_step, 0.1 / max ||M(t)||_inf)`` over ``[t0, t1]``."""
    rhs = _as_callable(rhs)
    grid = np.linspace(t0, t1, samples)
    norm = float(np.abs(_stack(rhs, grid)).sum(axis=-1).max())
    if not math.isfinite(norm):
        raise SolverError("right-hand side is not finite on the integration interval")
    return max_step if norm == 0 else min(max_step, STEP_SAFETY / norm)


def rk4_step_matrices(M0: np.ndarray, Mh: np.ndarray, M1: np.ndarray, h: float) -> np.ndarray:
    """RK4 propagators for stacks of ``M(t)``, ``M(t+h/2)``, ``M(t+h)``."""
    eye = np.eye(M0.shape[-1])
    K1 = M0
    K2 = Mh @ (eye + 0.5 * h * K1)
    K3 = Mh @ (eye + 0.5 * h * K2)
    K4 = M1 @ (eye + h * K3)
    return eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _fixed_step(rhs, X0, t0, n_steps, h, stride=1, stop=None, check_every=16):
    """Step ``X <- P_k X`` from ``t0``; returns node times, stored states, rhs at nodes.

    With ``stop`` set, ``n_steps`` is an upper bound and ``stop(t, X)`` is
    polled every ``check_every`` steps.
    """
    X = np.array(X0, dtype=float)
    times, states, mats = [t0], [X.copy()], []
    done = 0
    while done < n_steps:
        count = min(BLOCK, n_steps - done)
        nodes = t0 + h * np.arange(done, done + count + 1)
        Mn = _stack(rhs, nodes)
        Mm = _stack(rhs, nodes[:-1] + 0.5 * h)
        P = rk4_step_matrices(Mn[:-1], Mm, Mn[1:], h)
        if not np.all(np.isfinite(P)):
            raise SolverError("non-finite step matrix")
        if not mats:
            mats.append(Mn[0])
        for k in range(count):
            X = P[k] @ X
            step = done + k + 1
            finished = step == n_steps
            stopped = stop is not None and (step % check_every == 0) and stop(nodes[k + 1], X)
            if step % stride == 0 or finished or stopped:
                times.append(nodes[k + 1])
                states.append(X.copy())
                mats.append(Mn[k + 1])
            if stopped:
                return np.array(times), np.array(states), np.array(mats), True
        if not np.all(np.isfinite(X)):
            raise SolverError(f"non-finite state near t={nodes[-1]:.6g}")
        done += count
    return np.array(times), np.array(states), np.array(mats), False


def _adaptive(rhs, x0, t0, t1, tol, h0):
    def step(t, x, h):
        k1 = _stack(rhs, np.array([t]))[0] @ x
        Mh = _stack(rhs, np.array([t + 0.5 * h]))[0]
        k2 = Mh @ (x + 0.5 * h * k1)
        k3 = Mh @ (x + 0.5 * h * k2)
        k4 = _stack(rhs, np.array([t + h]))[0] @ (x + h * k3)
        return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    t, x, h = t0, np.array(x0, dtype=float), h0
    times, states = [t], [x.copy()]
    while t < t1:
        h = min(h, t1 - t)
        if h < H_MIN:
            if t1 - t < H_MIN:
                break
            raise SolverError(f"step size underflow at t={t:.6g}")
        full = step(t, x, h)
        half = step(t + 0.5 * h, step(t, x, 0.5 * h), 0.5 * h)
        err = float(np.max(np.abs(half - full))) / 15.0
        scale = tol * (1.0 + float(np.max(np.abs(half))))
        if not np.all(np.isfinite(half)):
            raise SolverError(f"non-finite state at t={t:.6g}")
        if err <= scale:
            t, x = t + h, half
            times.append(t)
            states.append(x.copy())
        factor = 2.0 if err == 0 else min(2.0, max(0.2, 0.9 * (scale / err) ** 0.2))
        h *= factor
    return np.array(times), np.array(states)


def integrate(rhs, x0, t0: float, t1: float, opts: SolverOptions | None = None) -> Trajectory:
    """Solve ``dx/dt = rhs(t) x`` on ``[t0, t1]``; ``rhs`` may also be a constant matrix."""
    opts = opts or SolverOptions()
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    rhs = _as_callable(rhs)
    x0 = np.asarray(x0, dtype=float)
    h = opts.h or step_size(rhs, t0, t1, opts.max_step)
    if opts.method == "adaptive":
        times, states = _adaptive(rhs, x0, t0, t1, opts.tol, h)
        derivs = np.einsum("tij,tj->ti", _stack(rhs, times), states)
        return Trajectory(times, states, {"method": "adaptive", "tol": opts.tol,
                                          "steps": len(times) - 1}, derivs)
    n_steps = max(1, math.ceil((t1 - t0) / h - 1e-9))
    h = (t1 - t0) / n_steps
    with np.errstate(over="ignore", invalid="ignore"):  # reported as SolverError instead
        times, states, mats, _ = _fixed_step(rhs, x0, t0, n_steps, h, opts.stride)
    times[-1] = t1
    derivs = np.einsum("tij,tj->ti", mats, states)
    return Trajectory(times, states, {"method": "rk4", "h": h, "steps": n_steps}, derivs)


# -- isolated cluster dynamics ------------------------------------------------


@dataclass(frozen=True)
class FundamentalMatrix:
    phi: np.ndarray
    t0: float
    t1: float

    @property
    def row_sums(self) -> np.ndarray:
        return self.phi.sum(axis=1)


@dataclass(frozen=True)
class AggregationWeights:
    """Weights ``q`` of one cluster at base time ``t``; ``spread`` bounds their error."""

    q: np.ndarray
    t: float
    spread: float
    t_end: float = math.nan


def _generator(Lk):
    Lk = _as_callable(Lk)
    return lambda t: -np.asarray(Lk(t), dtype=float)


def fundamental_matrix(Lk, t: float, tau: float, opts: SolverOptions | None = None) -> FundamentalMatrix:
    """``Phi(t, tau)`` of ``dx/ds = -Lk(s) x``, integrated as a matrix ODE."""
    if tau < t:
        raise ValueError("tau must be >= t")
    M = _generator(Lk)
    d = np.asarray(M(np.array([t]))).shape[-1]
    if tau == t:
        return FundamentalMatrix(np.eye(d), t, tau)
    traj = _matrix_run(M, t, tau, opts)
    return FundamentalMatrix(traj[1][-1], t, tau)


def _matrix_run(M, t, tau, opts=None, stride=1):
    opts = opts or SolverOptions()
    d = np.asarray(M(np.array([t]))).shape[-1]
    h = opts.h or step_size(M, t, tau, opts.max_step)
    n_steps = max(1, math.ceil((tau - t) / h - 1e-9))
    h = (tau - t) / n_steps
    times, states, _, _ = _fixed_step(M, np.eye(d), t, n_steps, h, stride)
    times[-1] = tau
    return times, states


def _row_spread(phi: np.ndarray) -> float:
    return float(np.ptp(phi, axis=0).max())


def _cut_floor(Lk, t0: float, t1: float, samples: int = 401) -> float:
    from .assumptions import internal_cuts

    grid = np.linspace(t0, t1, samples)
    L = _stack(_as_callable(Lk), grid)
    A = -L.copy()
    idx = np.arange(L.shape[-1])
    A[..., idx, idx] = 0.0
    if L.shape[-1] < 2:
        return math.inf
    return float(internal_cuts(A).min())


def compute_q(
    Lk,
    t: float = 0.0,
    tol: float = 1e-10,
    t_cap: float | None = None,
    opts: SolverOptions | None = None,
    c_floor: float | None = None,
) -> AggregationWeights:
    """Aggregation weights of one cluster from the consensus limit of ``Phi(t, .)``.

    ``Phi`` is integrated until its rows agree to ``tol`` (max column spread);
    ``q`` is the average row.  ``t_cap`` defaults to ``t + 50 / c_floor``
    where ``c_floor`` is the weakest internal cut, by default estimated on
    ``[t, t + 50]``.
    """
    M = _generator(Lk)
    d = np.asarray(M(np.array([t]))).shape[-1]
    if d == 1:
        return AggregationWeights(np.ones(1), t, 0.0, t)
    if t_cap is None:
        c = c_floor if c_floor is not None else _cut_floor(Lk, t, t + 50.0)
        if not c > 0:
            raise SolverError("cluster has a zero internal cut; aggregation weights do not exist")
        t_cap = t + 50.0 / c
    opts = opts or SolverOptions()
    h = opts.h or step_size(M, t, t_cap, opts.max_step)
    n_max = max(1, math.ceil((t_cap - t) / h))
    times, states, _, converged = _fixed_step(
        M, np.eye(d), t, n_max, h, stride=n_max,
        stop=lambda s, X: _row_spread(X) < tol, check_every=8,
    )
    phi = states[-1]
    spread = _row_spread(phi)
    if not (converged or spread < tol):
        raise SolverError(
            f"fundamental matrix rows still differ by {spread:.3g} at t_cap={t_cap:.6g}"
        )
    return AggregationWeights(phi.mean(axis=0), t, spread, float(times[-1]))


def q_invariant(Lk, x0, t_grid, tol: float = 1e-10, opts: SolverOptions | None = None) -> np.ndarray:
    """``q(t)^T x(t)`` along the isolated dynamics started from ``x0`` at ``t_grid[0]``."""
    t_grid = np.asarray(t_grid, dtype=float)
    M = _generator(Lk)
    x = np.asarray(x0, dtype=float)
    out = []
    for i, t in enumerate(t_grid):
        if i > 0:
            x = integrate(M, x, t_grid[i - 1], t, opts).final
        out.append(float(compute_q(Lk, t, tol, opts=opts).q @ x))
    return np.array(out)


def q_bounds(K_I: float, n_min: int, n_max: int) -> tuple[float, float]:
    """Uniform bounds on aggregation weights from the cut-balance constant."""
    q_min = (math.exp(-K_I) / n_max) ** (n_max - 1)
    return q_min, 1.0 - (n_min - 1) * q_min


def phi_floor_time(Lk, t: float, K_I: float, t_end: float, opts: SolverOptions | None = None):
    """First checkpoint after which every ``Phi_jr(t, s) >= (exp(-K_I)/n_k)^(n_k - 1)``.

    Returns ``(t_prime, bound, min_entry_after)``; ``t_prime`` is ``None`` if
    the bound still fails at ``t_end``.
    """
    M = _generator(Lk)
    times, states = _matrix_run(M, t, t_end, opts)
    d = states.shape[-1]
    bound = (math.exp(-K_I) / d) ** (d - 1)
    low = states.reshape(len(states), -1).min(axis=1)
    failing = np.flatnonzero(low < bound)
    if len(failing) and failing[-1] == len(times) - 1:
        return None, bound, float(low[-1])
    first = 0 if not len(failing) else failing[-1] + 1
    return float(times[first]), bound, float(low[first:].min())


# -- all clusters -------------------------------------------------------------


def aggregation_weights(spec, t: float = 0.0, tol: float = 1e-10, opts: SolverOptions | None = None):
    """:func:`compute_q` for every cluster of ``spec`` at time ``t``."""
    return [compute_q(lambda s, k=k: spec.cluster_laplacian(k, s), t, tol, opts=opts)
            for k in range(spec.m)]


class AggregationPath:
    """Aggregation weights of every cluster as functions of time on ``[t0, t1]``.

    Weights come from the consensus limit at ``t1`` and are carried back with
    the adjoint relation ``q(t)^T = q(t1)^T Phi(t, t1)``, which holds exactly
    for the limiting weights.  Between nodes values are cubic Hermite
    interpolants using ``dq/dt = L^k(t)^T q``.
    """

    def __init__(self, spec, t0: float, t1: float, tol: float = 1e-10,
                 opts: SolverOptions | None = None, const_tol: float = 1e-12):
        self.t0, self.t1 = float(t0), float(t1)
        self.spread = 0.0
        self._const: list[np.ndarray | None] = []
        self._splines: list[CubicHermiteSpline | None] = []
        for k in range(spec.m):
            Lk = lambda s, k=k: spec.cluster_laplacian(k, s)
            end = compute_q(Lk, self.t1, tol, opts=opts)
            self.spread = max(self.spread, end.spread)
            if spec.partition.sizes[k] == 1 or t1 <= t0:
                self._const.append(end.q)
                self._splines.append(None)
                continue
            nodes, qs = self._carry_back(Lk, end.q, opts)
            if np.max(np.abs(qs - qs[-1])) <= const_tol:
                self._const.append(qs[-1])
                self._splines.append(None)
            else:
                dq = np.einsum("tji,tj->ti", np.asarray(Lk(nodes)), qs)
                self._const.append(None)
                self._splines.append(CubicHermiteSpline(nodes, qs, dq, axis=0))

    def _carry_back(self, Lk, q_end, opts):
        M = _generator(Lk)
        opts = opts or SolverOptions()
        h = opts.h or step_size(M, self.t0, self.t1, opts.max_step)
        n = max(1, math.ceil((self.t1 - self.t0) / h - 1e-9))
        h = (self.t1 - self.t0) / n
        nodes = self.t0 + h * np.arange(n + 1)
        nodes[-1] = self.t1
        qs = np.empty((n + 1, len(q_end)))
        qs[-1] = q_end
        for start in range(n, 0, -BLOCK):
            lo = max(0, start - BLOCK)
            Mn = _stack(M, nodes[lo:start + 1])
            Mm = _stack(M, nodes[lo:start] + 0.5 * h)
            P = rk4_step_matrices(Mn[:-1], Mm, Mn[1:], h)
            for k in range(start - 1, lo - 1, -1):
                qs[k] = qs[k + 1] @ P[k - lo]
        return nodes, qs

    @property
    def constant(self) -> bool:
        return all(s is None for s in self._splines)

    def q(self, t) -> list[np.ndarray]:
        """Per-cluster weights at ``t`` (scalar) or stacks for an array of times."""
        out = []
        t_arr = np.asarray(t, dtype=float)
        for c, sp in zip(self._const, self._splines):
            if sp is None:
                out.append(np.broadcast_to(c, t_arr.shape + c.shape).copy())
            else:
                out.append(sp(np.clip(t_arr, self.t0, self.t1)))
        return out


def aggregation_path(spec, t0: float, t1: float, tol: float = 1e-10,
                     opts: SolverOptions | None = None) -> AggregationPath:
    return AggregationPath(spec, t0, t1, tol, opts)


# -- CSV ---------------------------------------------------------------------


def write_csv(traj: Trajectory, path, columns: list[str] | None = None) -> None:
    """``t,x1,...,xn`` header then one row per sample, 17 significant digits."""
    columns = columns or [f"x{i + 1}" for i in range(traj.dim)]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + list(columns))
        for t, x in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x])


def read_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(-1, len(header))
    return Trajectory(data[:, 0], data[:, 1:], {"columns": header[1:]})
