"""Undirected simple graphs, canonical node orderings, spectral node features
and isomorphism testing.

Graphs are small (at most a few hundred nodes), so dense numpy adjacency
matrices are used throughout.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ORDERINGS = ("bfs_degree", "degree", "pagerank")


class GraphError(ValueError):
    """Raised for malformed graph input."""


class EmptyGenerationError(GraphError):
    """A decoded adjacency contained no edges."""


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...] = field(default=())

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        if self.edges:
            e = np.asarray(self.edges)
            a[e[:, 0], e[:, 1]] = 1
            a[e[:, 1], e[:, 0]] = 1
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(x)) for x in nbrs)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Return the graph with node ``i`` renamed to ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.n)):
            raise GraphError("relabel requires a permutation of the node set")
        return from_edge_list([(perm[u], perm[v]) for u, v in self.edges], self.n)

    def reorder(self, ordering: Sequence[int]) -> "Graph":
        """Return the graph with ``ordering[k]`` moved to position ``k``."""
        inverse = [0] * self.n
        for pos, node in enumerate(ordering):
            inverse[node] = pos
        return self.relabel(inverse)

    def components(self) -> list[list[int]]:
        seen = [False] * self.n
        comps = []
        for s in range(self.n):
            if seen[s]:
                continue
            seen[s] = True
            comp, queue = [], deque([s])
            while queue:
                u = queue.popleft()
                comp.append(u)
                for w in self.neighbors[u]:
                    if not seen[w]:
                        seen[w] = True
                        queue.append(w)
            comps.append(sorted(comp))
        return comps

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g


def from_edge_list(edges: Iterable[Sequence[int]], n: int) -> Graph:
    """Build a canonical graph: edges deduplicated, stored as sorted ``(u, v)`` with u < v."""
    if n < 1:
        raise GraphError(f"node count must be >= 1, got {n}")
    canon = set()
    for pair in edges:
        u, v = int(pair[0]), int(pair[1])
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge ({u}, {v}) has an endpoint outside [0, {n})")
        if u == v:
            raise GraphError(f"self-loop at node {u}")
        canon.add((u, v) if u < v else (v, u))
    return Graph(n, tuple(sorted(canon)))


def from_networkx(g) -> Graph:
    nodes = list(g.nodes())
    index = {v: i for i, v in enumerate(nodes)}
    return from_edge_list([(index[u], index[v]) for u, v in g.edges()], len(nodes))


def drop_isolated(g: Graph) -> Graph:
    keep = np.flatnonzero(g.degrees > 0)
    if len(keep) == g.n:
        return g
    if len(keep) == 0:
        raise EmptyGenerationError("graph has no edges")
    new = {int(v): i for i, v in enumerate(keep)}
    return from_edge_list([(new[u], new[v]) for u, v in g.edges], len(keep))


# --- orderings ------------------------------------------------------------


def order_degree(g: Graph) -> list[int]:
    deg = g.degrees
    return sorted(range(g.n), key=lambda v: (-deg[v], v))


def order_bfs_degree(g: Graph) -> list[int]:
    """BFS from the highest-degree node, visiting higher-degree neighbours first.

    Components are concatenated, each rooted at its own highest-degree node,
    in descending order of that root degree. All ties go to the smaller index.
    """
    deg = g.degrees
    seen = [False] * g.n
    order: list[int] = []
    for root in order_degree(g):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            u = queue.popleft()
            order.append(u)
            fresh = [w for w in g.neighbors[u] if not seen[w]]
            fresh.sort(key=lambda w: (-deg[w], w))
            for w in fresh:
                seen[w] = True
                queue.append(w)
    return order


def pagerank(g: Graph, damping: float = 0.85, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    n = g.n
    a = g.adjacency.astype(np.float64)
    deg = a.sum(axis=1)
    dangling = deg == 0
    inv = np.divide(1.0, deg, out=np.zeros(n), where=~dangling)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        spread = a.T @ (x * inv)
        new = damping * (spread + x[dangling].sum() / n) + (1.0 - damping) / n
        change = np.abs(new - x).sum()
        x = new
        if change < tol:
            break
    return x


def order_pagerank(g: Graph) -> list[int]:
    # rounding keeps symmetric nodes tied despite last-ulp noise
    scores = np.round(pagerank(g), 12)
    return sorted(range(g.n), key=lambda v: (-scores[v], v))


def node_ordering(g: Graph, method: str) -> list[int]:
    if method == "bfs_degree":
        return order_bfs_degree(g)
    if method == "degree":
        return order_degree(g)
    if method == "pagerank":
        return order_pagerank(g)
    raise ValueError(f"unknown ordering {method!r}; expected one of {ORDERINGS}")


# --- spectral features ----------------------------------------------------


def normalized_laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency.astype(np.float64)
    deg = a.sum(axis=1)
    d_inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    return np.eye(g.n) - d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns eigenvalues in ascending order and the matching unit eigenvectors
    as columns. Iterates until the off-diagonal Frobenius norm drops below ``tol``.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("jacobi_eigh expects a square matrix")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("jacobi_eigh expects a symmetric matrix")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    idx = np.argsort(w, kind="stable")
    return w[idx], v[:, idx]


def _fix_signs(vecs: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > atol)
        if len(nz) and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def spectral_eigenpairs(g: Graph, d: int, solver: str = "lapack") -> tuple[np.ndarray, np.ndarray]:
    lap = normalized_laplacian(g)
    if solver == "lapack":
        w, v = np.linalg.eigh(lap)
    elif solver == "jacobi":
        w, v = jacobi_eigh(lap)
    else:
        raise ValueError(f"unknown eigensolver {solver!r}")
    k = min(d, g.n)
    return w[:k], _fix_signs(v[:, :k])


def spectral_features(g: Graph, d: int = 10, solver: str = "lapack") -> np.ndarray:
    """Eigenvectors of the normalized Laplacian for the ``d`` smallest eigenvalues.

    Row ``i`` belongs to node ``i``. Each column is unit norm with its first
    nonzero entry positive; columns beyond ``n`` are zero.
    """
    if d < 1:
        raise ValueError("feature dimension must be >= 1")
    _, vecs = spectral_eigenpairs(g, d, solver)
    out = np.zeros((g.n, d))
    out[:, : vecs.shape[1]] = vecs
    return out


# --- dense adjacency ------------------------------------------------------


def to_padded_adjacency(g: Graph, ordering: Sequence[int], n_max: int) -> np.ndarray:
    if g.n > n_max:
        raise GraphError(f"graph has {g.n} nodes, more than n_max={n_max}")
    out = np.zeros((n_max, n_max), dtype=np.float32)
    out[: g.n, : g.n] = g.reorder(ordering).adjacency
    return out


def from_dense_adjacency(probs: np.ndarray, threshold: float = 0.5) -> Graph:
    """Discretize an edge-probability matrix into a graph.

    The matrix is symmetrized, pairs strictly above ``threshold`` become
    edges, and zero-degree rows are dropped.
    """
    p = np.asarray(probs, dtype=np.float64)
    sym = (p + p.T) / 2.0
    np.fill_diagonal(sym, 0.0)
    iu, ju = np.nonzero(np.triu(sym > threshold, k=1))
    if len(iu) == 0:
        raise EmptyGenerationError("decoded adjacency has no edges")
    g = from_edge_list(zip(iu.tolist(), ju.tolist()), p.shape[0])
    return drop_isolated(g)


# --- isomorphism ----------------------------------------------------------


def refine_colors(graphs: Sequence[Graph], rounds: int | None = None) -> list[list[int]]:
    """Colour refinement run jointly on several graphs so colours are comparable.

    Colours start as degrees; each round a node's new colour is the rank of
    (old colour, neighbour-colour histogram) among all such rows, which keeps
    the colouring independent of node labels.
    """
    colors = [g.degrees.astype(np.int64) for g in graphs]
    rounds = rounds if rounds is not None else max(g.n for g in graphs)
    n_classes = len(np.unique(np.concatenate(colors)))
    for _ in range(rounds):
        k = int(max(c.max() for c in colors)) + 1
        rows = []
        for g, c in zip(graphs, colors):
            onehot = np.zeros((g.n, k))
            onehot[np.arange(g.n), c] = 1.0
            rows.append(np.hstack([c[:, None].astype(np.float64), g.adjacency @ onehot]))
        _, inverse = np.unique(np.vstack(rows), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        splits = np.cumsum([g.n for g in graphs])[:-1]
        colors = np.split(inverse.astype(np.int64), splits)
        classes = int(inverse.max()) + 1
        if classes == n_classes:
            break
        n_classes = classes
    return [c.tolist() for c in colors]


def _triangles(g: Graph) -> int:
    a = g.adjacency
    return int(np.trace(a @ a @ a)) // 6


def are_isomorphic(g1: Graph, g2: Graph) -> bool:
    if g1.n != g2.n or g1.m != g2.m:
        return False
    if sorted(g1.degrees.tolist()) != sorted(g2.degrees.tolist()):
        return False
    if _triangles(g1) != _triangles(g2):
        return False
    c1, c2 = refine_colors([g1, g2])
    if sorted(c1) != sorted(c2):
        return False

    # most constrained first: rare colours, then BFS-connected to mapped nodes
    freq: dict[int, int] = {}
    for c in c1:
        freq[c] = freq.get(c, 0) + 1
    order: list[int] = []
    placed = [False] * g1.n
    while len(order) < g1.n:
        frontier = [v for v in range(g1.n) if not placed[v] and any(placed[w] for w in g1.neighbors[v])]
        pool = frontier or [v for v in range(g1.n) if not placed[v]]
        v = min(pool, key=lambda x: (freq[c1[x]], -g1.degrees[x], x))
        placed[v] = True
        order.append(v)

    a1, a2 = g1.adjacency, g2.adjacency
    by_color: dict[int, list[int]] = {}
    for u in range(g2.n):
        by_color.setdefault(c2[u], []).append(u)
    mapping = [-1] * g1.n
    used = [False] * g2.n

    def extend(k: int) -> bool:
        if k == len(order):
            return True
        v = order[k]
        mapped = order[:k]
        for u in by_color[c1[v]]:
            if used[u]:
                continue
            if any(a1[v, w] != a2[u, mapping[w]] for w in mapped):
                continue
            mapping[v] = u
            used[u] = True
            if extend(k + 1):
                return True
            used[u] = False
            mapping[v] = -1
        return False

    return extend(0)


# --- text formats ---------------------------------------------------------


def write_edge_list(g: Graph, path: str | Path) -> None:
    Path(path).write_text("".join(f"{u} {v}\n" for u, v in g.edges))


def read_edge_list(path: str | Path, n: int | None = None) -> Graph:
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        u, v = line.split()[:2]
        pairs.append((int(u), int(v)))
    if n is None:
        n = 1 + max((max(p) for p in pairs), default=0)
    return from_edge_list(pairs, n)


def to_dot(g: Graph, name: str = "G") -> str:
    lines = [f"graph {name} {{"]
    lines += [f"  {v};" for v in range(g.n)]
    lines += [f"  {u} -- {v};" for u, v in g.edges]
    lines.append("}")
    return "\n".join(lines) + "\n"
