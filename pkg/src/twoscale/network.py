"""Clustered networks with time-varying weights and their Laplacians.

Agents are labelled ``1..n`` in configuration files.  On load the labels are
permuted so that every cluster occupies a contiguous index range and cluster
``k`` precedes cluster ``k+1``; inside a cluster the original order is kept.
All matrices produced here use the canonical (0-based, contiguous) order.

Config files are TOML::

    n = 3
    eps = 0.1
    horizon = 20.0
    clusters = [[1, 2], [3]]
    period = 3.141592653589793     # optional, common period of all weights
    x0 = [1.0, 0.0, 2.0]           # optional initial condition

    [w]
    1.2 = "2 + cos(2*t)"           # weight a_12: agent 1 listens to agent 2
    2.1 = "1"
    1.3 = "eps*(sin(t) + 2)/3"

Absent entries are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
import json
import sys
from typing import Sequence

import numpy as np

from .expr import ExprError, WeightExpr, parse

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "SpecError",
    "ClusterPartition",
    "NetworkSpec",
    "LaplacianSnapshot",
    "load_spec",
    "build_spec",
    "snapshot",
    "paper_example",
    "dump_config",
]

VALIDATION_POINTS = 1001


class SpecError(ValueError):
    """Invalid network specification."""


@dataclass(frozen=True)
class ClusterPartition:
    """Contiguous partition of ``0..n-1`` into clusters, given by sizes."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes:
            raise SpecError("at least one cluster is required")
        if min(self.sizes) < 1:
            raise SpecError("clusters must be nonempty")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def n_min(self) -> int:
        return min(self.sizes)

    @property
    def n_max(self) -> int:
        return max(self.sizes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)]))

    def slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def members(self, k: int) -> range:
        return range(self.offsets[k], self.offsets[k + 1])

    @cached_property
    def cluster_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.m), self.sizes)

    @property
    def clusters(self) -> list[list[int]]:
        return [list(self.members(k)) for k in range(self.m)]


@dataclass(frozen=True)
class LaplacianSnapshot:
    """All Laplacian-type matrices of a network at a single time."""

    t: float
    A: np.ndarray
    D: np.ndarray
    L: np.ndarray
    L_I: np.ndarray
    L_E: np.ndarray
    blocks: tuple[np.ndarray, ...]

    @property
    def A_E(self) -> np.ndarray:
        return -self.L_E + np.diag(np.diag(self.L_E))


@dataclass(frozen=True)
class NetworkSpec:
    """Validated clustered network, in canonical labelling.

    ``entries`` lists the nonzero weights as ``(i, j, expr)`` with 0-based
    canonical indices; ``a_ij`` is the weight agent ``i`` gives to agent ``j``.
    ``permutation[new] = old`` maps canonical indices back to the 0-based
    positions of the original labels.
    """

    partition: ClusterPartition
    entries: tuple[tuple[int, int, WeightExpr], ...]
    eps: float
    horizon: float
    permutation: tuple[int, ...]
    period: float | None = None
    x0: tuple[float, ...] | None = None
    name: str = ""
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        n = self.partition.n
        if sorted(self.permutation) != list(range(n)):
            raise SpecError("permutation must be a bijection of 0..n-1")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise SpecError("horizon must be positive and finite")
        if not np.isfinite(self.eps) or self.eps < 0:
            raise SpecError("eps must be finite and nonnegative")
        if self.x0 is not None and len(self.x0) != n:
            raise SpecError(f"x0 has {len(self.x0)} entries, expected {n}")
        seen = set()
        for i, j, _ in self.entries:
            if not (0 <= i < n and 0 <= j < n):
                raise SpecError(f"weight index ({i + 1}, {j + 1}) out of range")
            if i == j:
                raise SpecError(f"diagonal weight for agent {i + 1} is not allowed")
            if (i, j) in seen:
                raise SpecError(f"duplicate weight ({i + 1}, {j + 1})")
            seen.add((i, j))
        if self.validate:
            self.check_weights()

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def m(self) -> int:
        return self.partition.m

    def check_weights(self, points: int = VALIDATION_POINTS) -> None:
        """Raise :class:`SpecError` unless every weight is finite and >= 0 on a grid."""
        grid = np.linspace(0.0, self.horizon, max(points, VALIDATION_POINTS))
        for i, j, expr in self.entries:
            values = np.broadcast_to(expr(grid, self.eps), grid.shape)
            if not np.all(np.isfinite(values)):
                k = int(np.argmin(np.isfinite(values)))
                raise SpecError(
                    f"weight ({self.label(i)}, {self.label(j)}) = {expr.source!r} "
                    f"is not finite at t={grid[k]:.6g}"
                )
            if values.min() < 0:
                k = int(np.argmin(values))
                raise SpecError(
                    f"weight ({self.label(i)}, {self.label(j)}) = {expr.source!r} "
                    f"is negative ({values[k]:.6g}) at t={grid[k]:.6g}"
                )

    def label(self, i: int) -> int:
        """Original 1-based label of canonical index ``i``."""
        return self.permutation[i] + 1

    def with_eps(self, eps: float) -> "NetworkSpec":
        return replace(self, eps=float(eps))

    def weight(self, i: int, j: int) -> WeightExpr | None:
        for a, b, expr in self.entries:
            if (a, b) == (i, j):
                return expr
        return None

    def adjacency(self, t, eps: float | None = None) -> np.ndarray:
        """Adjacency matrix at ``t``; an array of times gives a stack ``(..., n, n)``."""
        eps = self.eps if eps is None else eps
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n, self.n))
        for i, j, expr in self.entries:
            out[..., i, j] = expr(t, eps)
        return out

    def laplacian(self, t, eps: float | None = None) -> np.ndarray:
        return laplacian_of(self.adjacency(t, eps))

    def intra_mask(self) -> np.ndarray:
        c = self.partition.cluster_of
        return c[:, None] == c[None, :]

    def internal_laplacian(self, t, eps: float | None = None) -> np.ndarray:
        return laplacian_of(self.adjacency(t, eps) * self.intra_mask())

    def external_laplacian(self, t, eps: float | None = None) -> np.ndarray:
        return laplacian_of(self.adjacency(t, eps) * ~self.intra_mask())

    def cluster_laplacian(self, k: int, t, eps: float | None = None) -> np.ndarray:
        s = self.partition.slice(k)
        return laplacian_of(self.adjacency(t, eps)[..., s, s])

    def cluster_generator(self, k: int, eps: float | None = None):
        """Callable ``t -> -L^k(t)`` for the isolated dynamics of cluster ``k``."""
        return lambda t: -self.cluster_laplacian(k, t, eps)

    def generator(self, eps: float | None = None):
        """Callable ``t -> -L(t)`` for the full consensus dynamics."""
        return lambda t: -self.laplacian(t, eps)

    @property
    def external_entries(self):
        c = self.partition.cluster_of
        return [(i, j, e) for i, j, e in self.entries if c[i] != c[j]]

    @property
    def internal_entries(self):
        c = self.partition.cluster_of
        return [(i, j, e) for i, j, e in self.entries if c[i] == c[j]]


def laplacian_of(A: np.ndarray) -> np.ndarray:
    """``D - A`` for a single matrix or a stack of matrices."""
    L = -A.copy()
    idx = np.arange(A.shape[-1])
    L[..., idx, idx] += A.sum(axis=-1)
    return L


def snapshot(spec: NetworkSpec, t: float, eps: float | None = None) -> LaplacianSnapshot:
    """Evaluate ``A, D, L = D - A`` and the intra/inter split at time ``t``."""
    A = spec.adjacency(float(t), eps)
    D = np.diag(A.sum(axis=1))
    L = D - A
    mask = spec.intra_mask()
    L_I = laplacian_of(A * mask)
    L_E = L - L_I
    p = spec.partition
    blocks = tuple(L_I[p.slice(k), p.slice(k)].copy() for k in range(p.m))
    return LaplacianSnapshot(float(t), A, D, L, L_I, L_E, blocks)


# -- construction -----------------------------------------------------------


def _as_expr(value, where: str) -> WeightExpr:
    if isinstance(value, WeightExpr):
        return value
    if isinstance(value, bool):
        raise SpecError(f"{where}: weight must be a string or a number")
    if isinstance(value, (int, float)):
        value = repr(float(value))
    if not isinstance(value, str):
        raise SpecError(f"{where}: weight must be a string or a number")
    try:
        return parse(value)
    except ExprError as err:
        raise SpecError(f"{where}: {err}") from err


def build_spec(
    clusters: Sequence[Sequence[int]],
    weights: dict,
    eps: float = 1.0,
    horizon: float = 20.0,
    n: int | None = None,
    period: float | None = None,
    x0: Sequence[float] | None = None,
    name: str = "",
    validate: bool = True,
) -> NetworkSpec:
    """Build a spec from 1-based ``clusters`` and ``{(i, j): expr}`` weights.

    Labels are in the user's numbering; the returned spec is canonically
    relabelled and records the permutation it applied.
    """
    clusters = [list(c) for c in clusters]
    if not clusters:
        raise SpecError("at least one cluster is required")
    owner = {}
    for k, members in enumerate(clusters):
        if not members:
            raise SpecError(f"cluster {k + 1} is empty")
        for a in members:
            if isinstance(a, bool) or not isinstance(a, (int, np.integer)):
                raise SpecError(f"agent label {a!r} is not an integer")
            if a in owner:
                raise SpecError(f"agent {a} in two clusters")
            owner[a] = k
    total = len(owner)
    if n is None:
        n = total
    expected = set(range(1, n + 1))
    if set(owner) != expected:
        missing = sorted(expected - set(owner))
        extra = sorted(set(owner) - expected)
        if missing:
            raise SpecError(f"agent {missing[0]} is not in any cluster")
        raise SpecError(f"agent {extra[0]} is outside 1..{n}")

    perm = [a - 1 for members in clusters for a in members]
    inverse = {old: new for new, old in enumerate(perm)}
    entries = []
    for key, value in weights.items():
        i, j = key
        where = f"w.{i}.{j}"
        if not (1 <= i <= n and 1 <= j <= n):
            raise SpecError(f"{where}: agent index out of range 1..{n}")
        expr = _as_expr(value, where)
        if i == j:
            if expr.is_zero:
                continue
            raise SpecError(f"{where}: diagonal weights are not allowed")
        if expr.is_zero:
            continue
        entries.append((inverse[i - 1], inverse[j - 1], expr))
    entries.sort(key=lambda e: (e[0], e[1]))
    partition = ClusterPartition(tuple(len(c) for c in clusters))
    if x0 is not None:
        if len(x0) != n:
            raise SpecError(f"x0 has {len(x0)} entries, expected {n}")
        x0 = tuple(float(x0[old]) for old in perm)
    return NetworkSpec(
        partition=partition,
        entries=tuple(entries),
        eps=float(eps),
        horizon=float(horizon),
        permutation=tuple(perm),
        period=None if period is None else float(period),
        x0=x0,
        name=name,
        validate=validate,
    )


def load_spec(config_text: str) -> NetworkSpec:
    """Parse and validate a TOML network config (see module docstring)."""
    try:
        data = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as err:
        raise SpecError(f"config syntax: {err}") from err
    for key in ("clusters",):
        if key not in data:
            raise SpecError(f"config is missing {key!r}")
    weights = {}
    for i, row in data.get("w", {}).items():
        if not isinstance(row, dict):
            raise SpecError(f"w.{i}: expected entries of the form w.i.j")
        for j, value in row.items():
            try:
                key = (int(i), int(j))
            except ValueError as err:
                raise SpecError(f"w.{i}.{j}: agent indices must be integers") from err
            weights[key] = value
    return build_spec(
        data["clusters"],
        weights,
        eps=float(data.get("eps", 1.0)),
        horizon=float(data.get("horizon", 20.0)),
        n=data.get("n"),
        period=data.get("period"),
        x0=data.get("x0"),
        name=str(data.get("name", "")),
    )


def dump_config(spec: NetworkSpec) -> str:
    """TOML text for ``spec`` in canonical labels; ``load_spec`` reads it back."""
    lines = []
    if spec.name:
        lines.append(f"name = {json.dumps(spec.name)}")
    lines += [
        f"n = {spec.n}",
        f"eps = {spec.eps!r}",
        f"horizon = {spec.horizon!r}",
        "clusters = [" + ", ".join(
            "[" + ", ".join(str(i + 1) for i in members) + "]"
            for members in spec.partition.clusters
        ) + "]",
    ]
    if spec.period is not None:
        lines.append(f"period = {spec.period!r}")
    if spec.x0 is not None:
        lines.append("x0 = [" + ", ".join(repr(v) for v in spec.x0) + "]")
    lines += ["", "[w]"]
    for i, j, expr in spec.entries:
        lines.append(f'{i + 1}.{j + 1} = "{expr.source}"')
    return "\n".join(lines) + "\n"


EXAMPLE_X0 = (6.0, 6.3, 4.4, 5.2, 3.0, 3.5, 0.4, 2.2)


def paper_example(eps: float = 0.2, horizon: float = 20.0) -> NetworkSpec:
    """Eight agents in two clusters of four.

    The exact edge set of the original figure is not recoverable from text, so
    this is a reconstruction: each cluster is a bidirectional 4-cycle, with
    weights ``2+cos(2*t)`` in cluster 1 and ``1`` in cluster 2, and the
    clusters exchange ``eps*(sin(t)+2)/3`` along 1<->5 and 4<->8.
    """
    weights = {}
    for base, expr in ((0, "2+cos(2*t)"), (4, "1")):
        for r in range(4):
            a, b = base + r + 1, base + (r + 1) % 4 + 1
            weights[(a, b)] = expr
            weights[(b, a)] = expr
    for a, b in ((1, 5), (5, 1), (4, 8), (8, 4)):
        weights[(a, b)] = "eps*(sin(t)+2)/3"
    return build_spec(
        [[1, 2, 3, 4], [5, 6, 7, 8]],
        weights,
        eps=eps,
        horizon=horizon,
        period=2 * np.pi,
        x0=EXAMPLE_X0,
        name="paper-example-reconstruction",
    )
