"""Cut quantities and grid-based verification of the network assumptions.

Every check here samples time; a passing report is evidence on the grid, not
a proof for all ``t``.  Subset minima are exhaustive, so clusters are capped
at :data:`ENUMERATION_CAP` agents.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .network import ClusterPartition, LaplacianSnapshot, NetworkSpec

__all__ = [
    "EnumerationError",
    "CutQuantities",
    "Witness",
    "AssumptionReport",
    "cut_weight",
    "c_internal",
    "gamma_external",
    "cut_quantities",
    "internal_cuts",
    "c_internal_series",
    "gamma_external_series",
    "check_assumptions",
]

ENUMERATION_CAP = 15
DEFAULT_GRID = 2000
REFINE_LEVELS = 4
REFINE_JUMP = 0.10
EPS_SLACK = 1e-12


class EnumerationError(ValueError):
    """A cluster is too large for exhaustive subset enumeration."""


@dataclass(frozen=True)
class CutQuantities:
    t: float
    cI: float
    gammaE: float

    @property
    def delta(self) -> float:
        return self.gammaE / self.cI if self.cI > 0 else math.nan


@dataclass(frozen=True)
class Witness:
    """Where a check failed: time, cluster (1-based) and offending subset (labels)."""

    assumption: str
    t: float
    cluster: int | None
    subset: tuple[int, ...]
    detail: str


@dataclass
class AssumptionReport:
    a1_holds: bool
    K_I: float
    K_I_cluster: tuple[float, ...]
    c_min: float
    a2_holds: bool
    K_E: float
    a_hat: float
    a3_holds: bool
    eps_hat: float
    eps: float
    grid: np.ndarray = field(repr=False)
    witnesses: list[Witness] = field(default_factory=list)
    a4_holds: bool | None = None
    a4_residual: float | None = None

    def holds(self, *names: str) -> bool:
        names = names or ("a1", "a2", "a3")
        return all(bool(getattr(self, f"{name}_holds")) for name in names)

    def failures(self, name: str) -> list[Witness]:
        return [w for w in self.witnesses if w.assumption == name]

    def records(self) -> list[dict]:
        """One plain-dict record per assumption."""
        def num(x):
            return None if x is None or not math.isfinite(x) else float(x)

        recs = [
            {"assumption": "A1", "holds": self.a1_holds, "K_I": num(self.K_I),
             "K_I_cluster": [num(k) for k in self.K_I_cluster], "c_min": num(self.c_min)},
            {"assumption": "A2", "holds": self.a2_holds, "K_E": num(self.K_E),
             "a_hat": num(self.a_hat)},
            {"assumption": "A3", "holds": self.a3_holds, "eps_hat": num(self.eps_hat),
             "eps": self.eps},
            {"assumption": "A4", "holds": self.a4_holds, "residual": num(self.a4_residual)},
        ]
        for rec in recs:
            name = rec["assumption"].lower()
            rec["witnesses"] = [asdict(w) for w in self.failures(name)][:5]
            rec["grid_points"] = int(len(self.grid))
        return recs

    def to_json(self) -> str:
        return "\n".join(json.dumps(r) for r in self.records())

    def to_text(self) -> str:
        def mark(ok):
            return {True: "holds", False: "FAILS", None: "not checked"}[ok]

        lines = [
            f"grid-based check on {len(self.grid)} times in "
            f"[{self.grid[0]:g}, {self.grid[-1]:g}] (evidence, not proof)",
            f"A1 intra-cluster cut balance: {mark(self.a1_holds)}  "
            f"K_I={self.K_I:.6g}  c_min={self.c_min:.6g}",
            f"A2 inter-cluster balance/persistence: {mark(self.a2_holds)}  "
            f"K_E={self.K_E:.6g}  a_hat={self.a_hat:.6g}",
            f"A3 time-scale ratio: {mark(self.a3_holds)}  "
            f"eps_hat={self.eps_hat:.6g}  eps={self.eps:.6g}",
        ]
        if self.a4_holds is not None:
            lines.append(f"A4 averaging limit: {mark(self.a4_holds)}  "
                         f"residual={self.a4_residual:.3g}")
        for w in self.witnesses[:10]:
            where = f" cluster {w.cluster}" if w.cluster is not None else ""
            lines.append(f"  witness {w.assumption.upper()} t={w.t:.6g}{where} "
                         f"S={list(w.subset)}: {w.detail}")
        return "\n".join(lines)


# -- single-time quantities ---------------------------------------------------


def cut_weight(A: np.ndarray, dst, src) -> float:
    """Total weight received by ``dst`` from ``src``: sum of ``A[i, j]``."""
    dst, src = sorted(set(dst)), sorted(set(src))
    if set(dst) & set(src):
        raise ValueError("dst and src must be disjoint")
    if not dst or not src:
        return 0.0
    return float(np.asarray(A)[np.ix_(dst, src)].sum())


def _subset_masks(size: int) -> np.ndarray:
    """Boolean membership table of all nontrivial subsets, row ``s`` is bitmask ``s+1``."""
    if size > ENUMERATION_CAP:
        raise EnumerationError(
            f"cluster of {size} agents exceeds the enumeration cap of {ENUMERATION_CAP}"
        )
    masks = np.arange(1, 2 ** size - 1)
    return ((masks[:, None] >> np.arange(size)) & 1).astype(bool)


def internal_cuts(Ak: np.ndarray) -> np.ndarray:
    """Weight received by each nontrivial subset from the rest of its cluster.

    ``Ak`` is an ``(..., nk, nk)`` stack of intra-cluster adjacency blocks.
    Column ``s`` corresponds to the bitmask ``s+1`` over local indices.
    Terms are accumulated pair by pair in row-major order so the result does
    not depend on BLAS summation order.
    """
    Ak = np.asarray(Ak, dtype=float)
    nk = Ak.shape[-1]
    inside = _subset_masks(nk)
    out = np.zeros(Ak.shape[:-2] + (len(inside),))
    for i in range(nk):
        for j in range(nk):
            if i == j:
                continue
            a = Ak[..., i, j]
            if not np.any(a):
                continue
            sel = (inside[:, i] & ~inside[:, j]).astype(float)
            out += a[..., None] * sel
    return out


def _cluster_blocks(A: np.ndarray, partition: ClusterPartition):
    for k in range(partition.m):
        s = partition.slice(k)
        yield A[..., s, s]


def c_internal(snap: LaplacianSnapshot, partition: ClusterPartition) -> float:
    """Weakest internal cut: min over clusters and nontrivial subsets."""
    best = math.inf
    for Ak in _cluster_blocks(snap.A, partition):
        if Ak.shape[-1] > 1:
            best = min(best, float(internal_cuts(Ak).min()))
    return best


def _external_inflow(A: np.ndarray, partition: ClusterPartition) -> np.ndarray:
    c = partition.cluster_of
    ext = np.where(c[:, None] != c[None, :], A, 0.0)
    rows = ext.sum(axis=-1)
    return np.stack([rows[..., partition.slice(k)].sum(axis=-1)
                     for k in range(partition.m)], axis=-1)


def gamma_external(snap: LaplacianSnapshot, partition: ClusterPartition) -> float:
    """Largest total weight any cluster receives from outside itself."""
    if partition.m < 2:
        return 0.0
    return float(_external_inflow(snap.A, partition).max())


def cut_quantities(snap: LaplacianSnapshot, partition: ClusterPartition) -> CutQuantities:
    return CutQuantities(snap.t, c_internal(snap, partition), gamma_external(snap, partition))


# -- time series --------------------------------------------------------------


def c_internal_series(spec: NetworkSpec, times, eps: float | None = None) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.full(len(times), math.inf)
    p = spec.partition
    for k in range(p.m):
        if p.sizes[k] < 2:
            continue
        sub = _cluster_spec_adjacency(spec, k, times, eps)
        out = np.minimum(out, internal_cuts(sub).min(axis=-1))
    return out


def _cluster_spec_adjacency(spec: NetworkSpec, k: int, times, eps=None) -> np.ndarray:
    p = spec.partition
    lo, hi = p.offsets[k], p.offsets[k + 1]
    eps = spec.eps if eps is None else eps
    out = np.zeros(np.shape(times) + (hi - lo, hi - lo))
    for i, j, expr in spec.entries:
        if lo <= i < hi and lo <= j < hi:
            out[..., i - lo, j - lo] = expr(times, eps)
    return out


def _cluster_flows(spec: NetworkSpec, times, eps=None) -> np.ndarray:
    """``W[..., k, h]``: weight cluster ``k`` receives from cluster ``h`` (k != h)."""
    eps = spec.eps if eps is None else eps
    c = spec.partition.cluster_of
    W = np.zeros(np.shape(times) + (spec.m, spec.m))
    for i, j, expr in spec.entries:
        if c[i] != c[j]:
            W[..., c[i], c[j]] += expr(times, eps)
    return W


def gamma_external_series(spec: NetworkSpec, times, eps: float | None = None) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if spec.m < 2:
        return np.zeros(len(times))
    return _cluster_flows(spec, times, eps).sum(axis=-1).max(axis=-1)


def _refine(spec: NetworkSpec, grid: np.ndarray, levels: int) -> np.ndarray:
    """Bisect intervals where c^I or gamma^E jumps by more than 10% relative."""
    grid = np.asarray(grid, dtype=float)
    values = [c_internal_series(spec, grid), gamma_external_series(spec, grid)]
    candidates = np.ones(len(grid) - 1, dtype=bool)
    for _ in range(levels):
        flagged = np.zeros(len(grid) - 1, dtype=bool)
        for v in values:
            a, b = v[:-1], v[1:]
            scale = np.maximum(np.abs(a), np.abs(b))
            with np.errstate(invalid="ignore"):
                jump = np.abs(a - b) > REFINE_JUMP * scale
            flagged |= jump & np.isfinite(scale)
        flagged &= candidates
        if not flagged.any():
            break
        mids = 0.5 * (grid[:-1][flagged] + grid[1:][flagged])
        new_values = [c_internal_series(spec, mids), gamma_external_series(spec, mids)]
        order = np.argsort(np.concatenate([grid, mids]), kind="stable")
        is_new = np.concatenate([np.zeros(len(grid), bool), np.ones(len(mids), bool)])[order]
        grid = np.concatenate([grid, mids])[order]
        values = [np.concatenate([v, nv])[order] for v, nv in zip(values, new_values)]
        # only intervals touching a new point are candidates at the next level
        candidates = is_new[:-1] | is_new[1:]
    return grid


def _ratio_scan(num: np.ndarray, den: np.ndarray):
    """Max of num/den with 0/0 read as 1; also the positions of x/0, x > 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    bad = (den <= 0) & (num > 0)
    return float(ratio[~bad].max()) if (~bad).any() else 1.0, np.argwhere(bad)


def check_assumptions(
    spec: NetworkSpec,
    grid_size: int = DEFAULT_GRID,
    refine_levels: int = REFINE_LEVELS,
) -> AssumptionReport:
    """Check the intra/inter cluster balance, persistence and time-scale ratio.

    Times are ``grid_size`` uniform samples of ``[0, horizon]`` plus a local
    bisection pass where the cut quantities move by more than 10% between
    neighbours.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    p = spec.partition
    for size in p.sizes:
        if size > ENUMERATION_CAP:
            raise EnumerationError(
                f"cluster of {size} agents exceeds the enumeration cap of {ENUMERATION_CAP}"
            )
    grid = _refine(spec, np.linspace(0.0, spec.horizon, grid_size), refine_levels)
    witnesses: list[Witness] = []

    # A1: internal cut balance, one cluster at a time
    cI = np.full(len(grid), math.inf)
    K_cluster = []
    for k in range(p.m):
        nk = p.sizes[k]
        if nk < 2:
            K_cluster.append(1.0)
            continue
        cuts = internal_cuts(_cluster_spec_adjacency(spec, k, grid))
        cI = np.minimum(cI, cuts.min(axis=-1))
        masks = np.arange(1, 2 ** nk - 1)
        reverse = cuts[:, (2 ** nk - 1 - masks) - 1]
        K, bad = _ratio_scan(cuts, reverse)
        K_cluster.append(K)
        for ti, si in bad[:20]:
            witnesses.append(Witness(
                "a1", float(grid[ti]), k + 1, _labels(spec, k, masks[si]),
                f"receives {cuts[ti, si]:.3g} but sends 0 to the rest of the cluster",
            ))
    c_min = float(cI.min())
    if not c_min > 0:
        ti = int(np.argmin(cI))
        witnesses.append(Witness("a1", float(grid[ti]), None, (),
                                 f"c^I = {cI[ti]:.3g} is not positive"))
    K_I = max(K_cluster)
    a1 = not any(w.assumption == "a1" for w in witnesses)

    # A3: time-scale ratio
    gE = gamma_external_series(spec, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(cI > 0, gE / np.where(cI > 0, cI, 1.0), math.inf)
    eps_hat = float(delta.max()) if p.m > 1 else 0.0
    if not math.isfinite(eps_hat):
        ti = int(np.argmax(delta))
        witnesses.append(Witness("a3", float(grid[ti]), None, (),
                                 "c^I = 0 makes the time-scale ratio undefined"))
    elif eps_hat > spec.eps * (1 + EPS_SLACK) + EPS_SLACK:
        ti = int(np.argmax(delta))
        witnesses.append(Witness("a3", float(grid[ti]), None, (),
                                 f"delta = {delta[ti]:.6g} exceeds eps = {spec.eps:.6g}"))
    a3 = not any(w.assumption == "a3" for w in witnesses)

    # A2: cluster-level balance and persistence
    K_E, a_hat = 1.0, math.inf
    if p.m > 1:
        W = _cluster_flows(spec, grid)
        inflow, outflow = W.sum(axis=-1), W.sum(axis=-2)
        masks = np.arange(1, 2 ** p.m - 1)
        member = ((masks[:, None] >> np.arange(p.m)) & 1).astype(float)
        lhs = inflow @ member.T
        rhs = outflow @ member.T
        K_E, bad = _ratio_scan(lhs, rhs)
        for ti, si in bad[:20]:
            witnesses.append(Witness(
                "a2", float(grid[ti]), None, tuple(int(b) + 1 for b in np.flatnonzero(member[si])),
                "clusters receive external weight but send none",
            ))
        # persistence: weight S receives from the clusters outside S
        persist = np.einsum("sk,tkh,sh->ts", member, W, 1.0 - member)
        zero = (persist <= 0) & (cI[:, None] > 0)
        for ti, si in np.argwhere(zero)[:20]:
            witnesses.append(Witness(
                "a2", float(grid[ti]), None, tuple(int(b) + 1 for b in np.flatnonzero(member[si])),
                "no weight received from the other clusters",
            ))
        scale = cI[:, None] * eps_hat
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(scale > 0, persist / np.where(scale > 0, scale, 1.0), math.inf)
        a_hat = float(ratios.min()) if not zero.any() else 0.0
    a2 = not any(w.assumption == "a2" for w in witnesses)

    return AssumptionReport(
        a1_holds=a1, K_I=K_I, K_I_cluster=tuple(K_cluster), c_min=c_min,
        a2_holds=a2, K_E=K_E, a_hat=a_hat,
        a3_holds=a3, eps_hat=eps_hat, eps=spec.eps,
        grid=grid, witnesses=witnesses,
    )


def _labels(spec: NetworkSpec, k: int, mask: int) -> tuple[int, ...]:
    lo = spec.partition.offsets[k]
    local = [b for b in range(spec.partition.sizes[k]) if (int(mask) >> b) & 1]
    return tuple(sorted(spec.label(lo + b) for b in local))
