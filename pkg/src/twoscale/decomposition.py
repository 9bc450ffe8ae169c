"""Aggregate/disagreement change of variables and the slow/fast block system.

With per-cluster aggregation weights ``q^k`` the state splits as

    y = J x  (weighted cluster means),   z = Q x  (offsets from each cluster's first agent),
    x = H y + Qt z,

and ``dx/dt = -L x`` becomes the block system with ``A11bar = -J L H``,
``A12bar = -J L Qt``, ``A21bar = -Q L H``, ``A22bar = -Q L Qt``.  Those are
the blocks as usually printed.  They are exact when ``q`` is constant in
time; when ``q`` varies the aggregate obeys ``dy/dt = -J L_E x`` instead,
which ``drift_corrected=True`` selects (``L_I H = 0`` so only the ``y``-row
of the ``z`` coupling changes).

Time is rescaled by ``t_f = int_0^t c^I(s) ds`` and ``t_s = eps t_f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import cumulative_simpson

from .assumptions import AssumptionReport, c_internal_series
from .integrate import AggregationPath, AggregationWeights, SolverOptions, integrate, step_size
from .network import ClusterPartition, LaplacianSnapshot, NetworkSpec, snapshot

__all__ = [
    "UnstableLimitError",
    "VariableSplit",
    "BlockSystem",
    "TimeRescaling",
    "q_stencil",
    "qt_stencil",
    "build_split",
    "split_state",
    "reconstruct",
    "block_matrices",
    "fast_time_map",
    "rescaled_matrices",
    "Decomposer",
    "dynamics_residual",
]

PROBE_EPS = 1e-6
PROBE_RTOL = 1e-6
RESOLUTION = 4000


class UnstableLimitError(ValueError):
    """The eps -> 0 limit of a rescaled block does not settle."""


def q_stencil(nk: int) -> np.ndarray:
    """``(nk-1, nk)`` differences to the first agent: ``-1`` column then identity."""
    Q = np.zeros((nk - 1, nk))
    Q[:, 0] = -1.0
    Q[:, 1:] = np.eye(nk - 1)
    return Q


def qt_stencil(q: np.ndarray) -> np.ndarray:
    """Right inverse of the stencil, ``(nk, nk-1)``: ``Qt[i, j] = [i == j+1] - q[j+1]``.

    ``q`` may carry leading time axes.
    """
    q = np.asarray(q, dtype=float)
    nk = q.shape[-1]
    Qt = -np.broadcast_to(q[..., None, 1:], q.shape[:-1] + (nk, nk - 1)).copy()
    Qt[..., 1:, :] += np.eye(nk - 1)
    return Qt


@dataclass(frozen=True)
class VariableSplit:
    J: np.ndarray
    Q: np.ndarray
    Qt: np.ndarray
    H: np.ndarray
    t: float = math.nan


def _as_q(item) -> np.ndarray:
    if isinstance(item, AggregationWeights):
        return np.asarray(item.q, dtype=float)
    return np.asarray(item, dtype=float)


def _check_q(partition: ClusterPartition, qs) -> list[np.ndarray]:
    if len(qs) != partition.m:
        raise ValueError(f"expected {partition.m} weight vectors, got {len(qs)}")
    out = []
    for k, q in enumerate(qs):
        q = _as_q(q)
        if q.shape[-1] != partition.sizes[k]:
            raise ValueError(f"cluster {k + 1}: weights of length {q.shape[-1]}, "
                             f"expected {partition.sizes[k]}")
        out.append(q)
    return out


def _block_diag(blocks, rows: int, cols: int) -> np.ndarray:
    lead = blocks[0].shape[:-2]
    out = np.zeros(lead + (rows, cols))
    r = c = 0
    for b in blocks:
        out[..., r:r + b.shape[-2], c:c + b.shape[-1]] = b
        r += b.shape[-2]
        c += b.shape[-1]
    return out


def _assemble(partition: ClusterPartition, qs):
    n, m = partition.n, partition.m
    J = _block_diag([q[..., None, :] for q in qs], m, n)
    Qt = _block_diag([qt_stencil(q) for q in qs], n, n - m)
    return J, Qt


def _static(partition: ClusterPartition):
    n, m = partition.n, partition.m
    Q = _block_diag([q_stencil(nk) for nk in partition.sizes], n - m, n)
    H = _block_diag([np.ones((nk, 1)) for nk in partition.sizes], n, m)
    return Q, H


def build_split(partition: ClusterPartition, q_per_cluster, t: float = math.nan) -> VariableSplit:
    """Assemble ``J, Q, Qt, H`` from one weight vector per cluster."""
    qs = _check_q(partition, q_per_cluster)
    J, Qt = _assemble(partition, qs)
    Q, H = _static(partition)
    return VariableSplit(J, Q, Qt, H, t)


def split_state(x, split: VariableSplit):
    x = np.asarray(x, dtype=float)
    return split.J @ x, split.Q @ x


def reconstruct(y, z, split: VariableSplit) -> np.ndarray:
    return split.H @ np.asarray(y, dtype=float) + split.Qt @ np.asarray(z, dtype=float)


@dataclass(frozen=True)
class BlockSystem:
    """Block matrices at one time.

    ``A11bar``..``A22bar`` act in original time; ``A11``..``A22`` are the
    fast-time versions (``None`` until rescaled).  ``violations`` lists norm
    bounds that failed when they were checked.
    """

    A11bar: np.ndarray
    A12bar: np.ndarray
    A21bar: np.ndarray
    A22bar: np.ndarray
    t: float
    cI: float
    A11: np.ndarray | None = None
    A12: np.ndarray | None = None
    A21: np.ndarray | None = None
    A22: np.ndarray | None = None
    eps: float | None = None
    violations: tuple[str, ...] = field(default=())

    def bar_norms(self) -> dict:
        return {name: _inf_norm(getattr(self, name))
                for name in ("A11bar", "A12bar", "A21bar", "A22bar")}

    def norms(self) -> dict:
        return {name: _inf_norm(getattr(self, name)) for name in ("A11", "A12", "A21", "A22")}


def _inf_norm(M) -> float:
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=-1).max())


def bar_bound_violations(blocks: BlockSystem, eps: float, slack: float = 1e-10) -> list[str]:
    """Check ``||A11bar||, ||A12bar||, ||A21bar|| <= 2 c^I eps`` and, for eps < 1/8,
    ``||A22bar|| >= (1 - 8 eps) c^I``."""
    out = []
    upper = 2.0 * blocks.cI * eps
    norms = blocks.bar_norms()
    for name in ("A11bar", "A12bar", "A21bar"):
        if norms[name] > upper * (1 + slack) + slack:
            out.append(f"||{name}|| = {norms[name]:.6g} > 2 c^I eps = {upper:.6g}")
    if eps < 1 / 8 and blocks.A22bar.size:
        lower = (1 - 8 * eps) * blocks.cI
        if norms["A22bar"] < lower * (1 - slack) - slack:
            out.append(f"||A22bar|| = {norms['A22bar']:.6g} < (1-8eps) c^I = {lower:.6g}")
    return out


def rescaled_bound_violations(blocks: BlockSystem, eps: float, slack: float = 1e-10) -> list[str]:
    out = []
    norms = blocks.norms()
    for name in ("A11", "A12", "A21"):
        if norms[name] > 2 * (1 + slack):
            out.append(f"||{name}|| = {norms[name]:.6g} > 2")
    if eps < 1 / 8 and blocks.A22.size and norms["A22"] < (1 - 8 * eps) * (1 - slack):
        out.append(f"||A22|| = {norms['A22']:.6g} < 1 - 8 eps = {1 - 8 * eps:.6g}")
    return out


def _bar_stacks(L, L_E, J, Q, Qt, H, drift_corrected: bool):
    # L_I H = 0 exactly, so the H columns are formed from L_E; this avoids
    # cancellation error that the eps -> 0 limit would amplify.
    A11 = -J @ L_E @ H
    A12 = -J @ (L_E if drift_corrected else L) @ Qt
    A21 = -Q @ L_E @ H
    A22 = -Q @ L @ Qt
    return A11, A12, A21, A22


def block_matrices(snap: LaplacianSnapshot, split: VariableSplit, eps: float | None = None,
                   cI: float | None = None, drift_corrected: bool = False) -> BlockSystem:
    """Blocks of the (y, z) system at the snapshot time.

    When ``eps`` is given the norm bounds are checked and failures recorded in
    ``violations``; only pass it when the assumptions are known to hold.
    """
    A11, A12, A21, A22 = _bar_stacks(snap.L, snap.L_E, split.J, split.Q, split.Qt, split.H,
                                     drift_corrected)
    if cI is None:
        cI = _snapshot_cI(snap)
    blocks = BlockSystem(A11, A12, A21, A22, snap.t, float(cI))
    if eps is not None:
        blocks = _with_violations(blocks, bar_bound_violations(blocks, eps))
    return blocks


def _with_violations(blocks: BlockSystem, found) -> BlockSystem:
    from dataclasses import replace

    return replace(blocks, violations=tuple(blocks.violations) + tuple(found))


def _snapshot_cI(snap: LaplacianSnapshot) -> float:
    from .assumptions import internal_cuts

    best = math.inf
    r = 0
    for block in snap.blocks:
        nk = block.shape[0]
        if nk > 1:
            A = -block + np.diag(np.diag(block))
            best = min(best, float(internal_cuts(A).min()))
        r += nk
    return best


# -- time rescaling -----------------------------------------------------------


@dataclass(frozen=True)
class TimeRescaling:
    """Tabulated ``t -> t_f`` with ``t_f = int_0^t c^I``; ``psi`` is its inverse."""

    t: np.ndarray
    tf: np.ndarray
    cI: np.ndarray
    eps: float

    def __post_init__(self):
        if not np.all(np.diff(self.tf) > 0):
            raise ValueError("fast time must be strictly increasing")

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    @property
    def tf_max(self) -> float:
        return float(self.tf[-1])

    def fast(self, t):
        return np.interp(t, self.t, self.tf)

    def slow(self, t):
        return self.eps * self.fast(t)

    def psi(self, tf):
        tf = np.asarray(tf, dtype=float)
        if np.any(tf > self.tf[-1] * (1 + 1e-12)):
            raise ValueError(f"fast time beyond the tabulated range {self.tf[-1]:.6g}")
        return np.interp(tf, self.tf, self.t)


def fast_time_map(spec: NetworkSpec, report: AssumptionReport | None = None,
                  resolution: int = RESOLUTION, t_max: float | None = None) -> TimeRescaling:
    """Tabulate ``t_f(t)`` on a uniform grid by cumulative Simpson quadrature of ``c^I``."""
    if report is not None and not report.c_min > 0:
        raise ValueError("c^I has no positive lower bound; fast time is undefined")
    t_max = spec.horizon if t_max is None else float(t_max)
    grid = np.linspace(0.0, t_max, max(3, resolution))
    cI = c_internal_series(spec, grid)
    if not np.all(np.isfinite(cI)):
        raise ValueError("c^I is infinite: no cluster has two or more agents")
    if np.any(cI <= 0):
        k = int(np.argmin(cI))
        raise ValueError(f"c^I = {cI[k]:.3g} <= 0 at t = {grid[k]:.6g}")
    tf = np.concatenate([[0.0], cumulative_simpson(cI, x=grid)])
    return TimeRescaling(grid, tf, cI, spec.eps)


def rescaled_matrices(blocks: BlockSystem, rescaling: TimeRescaling, t_f: float,
                      eps: float, check: bool = True) -> BlockSystem:
    """Fast-time blocks from original-time ones evaluated at ``psi(t_f)``."""
    from dataclasses import replace

    if not eps > 0:
        raise ValueError("eps must be positive; use Decomposer.rescaled(t_f, 0) for the limit")
    t = float(rescaling.psi(t_f))
    if abs(t - blocks.t) > 1e-8 * max(1.0, abs(t)):
        raise ValueError(f"blocks were built at t={blocks.t:.9g}, psi(t_f)={t:.9g}")
    c = blocks.cI
    out = replace(blocks, A11=blocks.A11bar / (c * eps), A12=blocks.A12bar / (c * eps),
                  A21=blocks.A21bar / (c * eps), A22=blocks.A22bar / c, eps=eps)
    if check:
        out = _with_violations(out, rescaled_bound_violations(out, eps))
    return out


class Decomposer:
    """Time-dependent decomposition of one network.

    ``weights`` is either an :class:`AggregationPath` or one constant weight
    vector per cluster.
    """

    def __init__(self, spec: NetworkSpec, weights, rescaling: TimeRescaling | None = None,
                 drift_corrected: bool = False):
        self.spec = spec
        self.partition = spec.partition
        self.rescaling = rescaling
        self.drift_corrected = drift_corrected
        if isinstance(weights, AggregationPath):
            self.path = weights
            self.fixed = None
        else:
            self.path = None
            self.fixed = _check_q(spec.partition, list(weights))
        self.Q, self.H = _static(spec.partition)

    def q(self, t) -> list[np.ndarray]:
        if self.path is not None:
            return self.path.q(t)
        shape = np.shape(t)
        return [np.broadcast_to(q, shape + q.shape).copy() for q in self.fixed]

    def split(self, t: float) -> VariableSplit:
        return build_split(self.partition, self.q(float(t)), float(t))

    def JQt(self, t):
        return _assemble(self.partition, self.q(t))

    def bar_stacks(self, t, eps: float | None = None, drift_corrected: bool | None = None):
        """``(A11bar, A12bar, A21bar, A22bar, cI)`` stacked over an array of times."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        A = self.spec.adjacency(t, eps)
        mask = self.spec.intra_mask()
        from .network import laplacian_of

        L = laplacian_of(A)
        L_E = laplacian_of(A * ~mask)
        J, Qt = self.JQt(t)
        if drift_corrected is None:
            drift_corrected = self.drift_corrected
        blocks = _bar_stacks(L, L_E, J, self.Q, Qt, self.H, drift_corrected)
        cI = c_internal_series(self.spec, t, eps)
        return (*blocks, cI)

    def blocks(self, t: float, eps: float | None = None, check_bounds: bool = False) -> BlockSystem:
        snap = snapshot(self.spec, t, eps)
        blocks = block_matrices(snap, self.split(t), drift_corrected=self.drift_corrected)
        if check_bounds:
            e = self.spec.eps if eps is None else eps
            blocks = _with_violations(blocks, bar_bound_violations(blocks, e))
        return blocks

    def _require_rescaling(self) -> TimeRescaling:
        if self.rescaling is None:
            raise ValueError("this decomposer has no time rescaling")
        return self.rescaling

    def rescaled_stacks(self, tf, eps: float, probe: float = PROBE_EPS):
        """``A11..A22`` at fast times ``tf``; ``eps == 0`` takes the singular limit.

        The eps-divided blocks are evaluated at ``probe`` and ``probe/2``; they
        must agree to ``1e-6`` relative.  ``A22`` is evaluated at eps = 0.
        In the limit the ``y`` rows use ``L_E`` only: ``J L_I`` vanishes for
        invariant weights and would otherwise divide rounding error by eps.
        """
        tf = np.atleast_1d(np.asarray(tf, dtype=float))
        t = self._require_rescaling().psi(tf)
        if eps > 0:
            A11, A12, A21, A22, cI = self.bar_stacks(t, eps)
            c = cI[:, None, None]
            return A11 / (c * eps), A12 / (c * eps), A21 / (c * eps), A22 / c
        first = self._divided(t, probe)
        second = self._divided(t, probe / 2)
        for name, a, b in zip(("A11", "A12", "A21"), first, second):
            diff = _inf_norm(a - b) if a.size else 0.0
            scale = _inf_norm(a) if a.size else 0.0
            if diff > PROBE_RTOL * scale + 1e-12:
                raise UnstableLimitError(
                    f"{name}(t_f, eps) does not settle as eps -> 0 (change {diff:.3g} "
                    f"between eps={probe:g} and {probe / 2:g}); external weights must "
                    "scale with eps"
                )
        *_, A22, cI = self.bar_stacks(t, 0.0)
        return first[0], first[1], first[2], A22 / cI[:, None, None]

    def _divided(self, t, eps):
        A11, A12, A21, _, cI = self.bar_stacks(t, eps, drift_corrected=True)
        c = cI[:, None, None] * eps
        return A11 / c, A12 / c, A21 / c

    def rescaled(self, tf: float, eps: float) -> BlockSystem:
        t = float(self._require_rescaling().psi(tf))
        A11, A12, A21, A22 = (a[0] for a in self.rescaled_stacks([tf], eps))
        bars = self.bar_stacks([t], eps if eps > 0 else None)
        out = BlockSystem(*(b[0] for b in bars[:4]), t, float(bars[4][0]),
                          A11, A12, A21, A22, eps)
        return _with_violations(out, rescaled_bound_violations(out, eps))

    def block_generator(self, eps: float | None = None):
        """Callable ``t -> [[A11bar, A12bar], [A21bar, A22bar]]`` for the (y, z) state."""
        m = self.partition.m

        def M(t):
            scalar = np.ndim(t) == 0
            A11, A12, A21, A22, _ = self.bar_stacks(t, eps)
            top = np.concatenate([A11, A12], axis=-1)
            bottom = np.concatenate([A21, A22], axis=-1)
            out = np.concatenate([top, bottom], axis=-2)
            return out[0] if scalar else out

        M.m = m
        return M

    def boundary_layer_generator(self):
        """Callable ``t_f -> A22(t_f, 0)``."""
        def M(tf):
            scalar = np.ndim(tf) == 0
            t = self._require_rescaling().psi(np.atleast_1d(tf))
            *_, A22, cI = self.bar_stacks(t, 0.0)
            out = A22 / cI[:, None, None]
            return out[0] if scalar else out

        return M


def dynamics_residual(decomposer: Decomposer, x0, t1: float, opts: SolverOptions | None = None):
    """Sup-norm gap between direct integration and the reconstructed (y, z) system.

    Both runs use the same RK4 step.  Returns ``(residual, x_trajectory, yz_trajectory)``.
    """
    spec = decomposer.spec
    x0 = np.asarray(x0, dtype=float)
    full = spec.generator()
    opts = opts or SolverOptions()
    if opts.h is None:
        h = step_size(full, 0.0, t1, opts.max_step)
        opts = SolverOptions(method=opts.method, h=h, tol=opts.tol, stride=opts.stride)
    x_traj = integrate(full, x0, 0.0, t1, opts)
    s0 = decomposer.split(0.0)
    y0, z0 = split_state(x0, s0)
    yz_traj = integrate(decomposer.block_generator(), np.concatenate([y0, z0]), 0.0, t1, opts)
    m = spec.m
    J, Qt = decomposer.JQt(yz_traj.times)
    x_hat = (np.einsum("ij,tj->ti", decomposer.H, yz_traj.states[:, :m])
             + np.einsum("tij,tj->ti", Qt, yz_traj.states[:, m:]))
    residual = float(np.max(np.abs(x_hat - x_traj.states)))
    return residual, x_traj, yz_traj
