"""The fifteen structural graph properties used as conditioning signal and
evaluation target."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphs import Graph, refine_colors

PROPERTY_NAMES = (
    "nodes",
    "edges",
    "density",
    "min_degree",
    "max_degree",
    "avg_degree",
    "assortativity",
    "triangles",
    "avg_triangles_per_edge",
    "max_triangles_per_edge",
    "avg_local_clustering",
    "global_clustering",
    "max_kcore",
    "communities",
    "diameter",
)
PROPERTY_LABELS = (
    "# nodes",
    "# edges",
    "Density",
    "Min. degree",
    "Max. degree",
    "Avg. degree",
    "Assortativity coefficient",
    "# triangles",
    "Avg. # triangles formed by an edge",
    "Max. # triangles formed by an edge",
    "Avg. local clustering coefficient",
    "Global clustering coefficient",
    "Max. k-core",
    "# communities",
    "Diameter",
)
N_PROPERTIES = len(PROPERTY_NAMES)
MASK_SENTINEL = -100.0
PROPERTY_INDEX = {name: i for i, name in enumerate(PROPERTY_NAMES)}


@dataclass(frozen=True)
class ConditionVector:
    """Property values in fixed order plus an observation mask (True = observed)."""

    values: tuple[float, ...]
    mask: tuple[bool, ...] = (True,) * N_PROPERTIES

    def __post_init__(self):
        if len(self.values) != N_PROPERTIES or len(self.mask) != N_PROPERTIES:
            raise ValueError(f"condition vectors have exactly {N_PROPERTIES} entries")

    @classmethod
    def observed(cls, values: Sequence[float]) -> "ConditionVector":
        return cls(tuple(float(v) for v in values))

    @classmethod
    def from_serialized(cls, values: Sequence[float]) -> "ConditionVector":
        vals = tuple(float(v) for v in values)
        mask = tuple(v != MASK_SENTINEL for v in vals)
        return cls(tuple(v if o else 0.0 for v, o in zip(vals, mask)), mask)

    @classmethod
    def parse(cls, text: str) -> "ConditionVector":
        """Parse ``"15,34,_,..."``; ``_`` marks a masked entry."""
        parts = [p.strip() for p in text.replace(" ", ",").split(",") if p.strip()]
        if len(parts) != N_PROPERTIES:
            raise ValueError(f"expected {N_PROPERTIES} comma-separated values, got {len(parts)}")
        vals = tuple(0.0 if p == "_" else float(p) for p in parts)
        return cls(vals, tuple(p != "_" for p in parts))

    def serialize(self) -> list[float]:
        return [v if o else MASK_SENTINEL for v, o in zip(self.values, self.mask)]

    def masked(self, indices) -> "ConditionVector":
        hide = set(int(i) for i in indices)
        return ConditionVector(self.values, tuple(o and i not in hide for i, o in enumerate(self.mask)))

    @property
    def n_observed(self) -> int:
        return sum(self.mask)

    def as_dict(self) -> dict[str, float | None]:
        return {k: (v if o else None) for k, v, o in zip(PROPERTY_NAMES, self.values, self.mask)}


def assortativity(g: Graph) -> float:
    """Degree Pearson correlation over both orientations of every edge; 0 when undefined."""
    if g.m == 0:
        return 0.0
    e = np.asarray(g.edges)
    deg = g.degrees.astype(np.float64)
    x = np.concatenate([deg[e[:, 0]], deg[e[:, 1]]])
    y = np.concatenate([deg[e[:, 1]], deg[e[:, 0]]])
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx < 1e-12 or sy < 1e-12:
        return 0.0
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def triangle_stats(g: Graph) -> tuple[int, float, int]:
    if g.m == 0:
        return 0, 0.0, 0
    a = g.adjacency
    common = a @ a
    e = np.asarray(g.edges)
    per_edge = common[e[:, 0], e[:, 1]]
    total = int(per_edge.sum()) // 3
    return total, float(per_edge.mean()), int(per_edge.max())


def clustering(g: Graph) -> tuple[float, float]:
    a = g.adjacency
    deg = g.degrees
    closed = ((a @ a) * a).sum(axis=1) // 2  # triangles through each node
    pairs = deg * (deg - 1) // 2
    local = np.divide(closed, pairs, out=np.zeros(g.n), where=pairs > 0)
    triples = int(pairs.sum())
    total = int(closed.sum()) // 3
    glob = 3.0 * total / triples if triples else 0.0
    return float(local.mean()), float(glob)


def max_kcore(g: Graph) -> int:
    deg = g.degrees.astype(np.int64).copy()
    alive = np.ones(g.n, dtype=bool)
    a = g.adjacency
    k = 0
    for _ in range(g.n):
        masked = np.where(alive, deg, np.iinfo(np.int64).max)
        v = int(np.argmin(masked))
        k = max(k, int(deg[v]))
        alive[v] = False
        deg -= a[v]
    return k


def count_communities(g: Graph) -> int:
    """Greedy agglomerative modularity maximization.

    Starts from singletons and repeatedly merges the connected pair of
    communities with the largest modularity gain while that gain is positive.
    Gains are compared in exact integer arithmetic; nodes are first put in a
    colour-refinement order so the result does not depend on node labels,
    and remaining ties go to the smallest community indices.
    """
    if g.m == 0:
        return g.n
    (colors,) = refine_colors([g])
    n = g.n
    order = sorted(range(n), key=lambda v: (colors[v], v))
    a = g.adjacency[np.ix_(order, order)]
    two_m = float(a.sum())
    # e[i, j]: edges between communities i and j; gains are 2m * e_ij - d_i * d_j,
    # i.e. modularity gain scaled by 2m^2, exact in float64 for these sizes
    e = a.astype(np.float64)
    d = e.sum(axis=1)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    gain = np.where(upper & (e > 0), two_m * e - np.outer(d, d), -np.inf)
    communities = n
    while True:
        flat = int(np.argmax(gain))
        if not gain.flat[flat] > 0:
            break
        i, j = divmod(flat, n)
        e[i, :] += e[j, :]
        e[:, i] += e[:, j]
        e[j, :] = 0.0
        e[:, j] = 0.0
        d[i] += d[j]
        d[j] = 0.0
        gain[j, :] = -np.inf
        gain[:, j] = -np.inf
        row = two_m * e[i, :] - d[i] * d
        gain[i, :] = np.where(upper[i, :] & (e[i, :] > 0), row, -np.inf)
        gain[:, i] = np.where(upper[:, i] & (e[:, i] > 0), row, -np.inf)
        communities -= 1
    return communities


def _eccentricity_max(a: np.ndarray) -> int:
    n = a.shape[0]
    reach = np.eye(n, dtype=bool)
    adj = a.astype(np.float32)
    steps = 0
    while not reach.all():
        nxt = reach | ((reach.astype(np.float32) @ adj) > 0)
        if (nxt == reach).all():
            raise ValueError("component is not connected")
        reach = nxt
        steps += 1
    return steps


def diameter(g: Graph) -> int:
    """Diameter of the largest connected component (largest diameter among equal-size ties)."""
    comps = g.components()
    size = max(len(c) for c in comps)
    best = 0
    for comp in comps:
        if len(comp) == size:
            best = max(best, _eccentricity_max(g.adjacency[np.ix_(comp, comp)]))
    return best


def compute_properties(g: Graph) -> ConditionVector:
    n, m = g.n, g.m
    deg = g.degrees
    tri, tri_avg, tri_max = triangle_stats(g)
    local, glob = clustering(g)
    values = (
        float(n),
        float(m),
        2.0 * m / (n * (n - 1)) if n > 1 else 0.0,
        float(deg.min()),
        float(deg.max()),
        2.0 * m / n,
        assortativity(g),
        float(tri),
        tri_avg,
        float(tri_max),
        local,
        glob,
        float(max_kcore(g)),
        float(count_communities(g)),
        float(diameter(g)),
    )
    return ConditionVector(values)
