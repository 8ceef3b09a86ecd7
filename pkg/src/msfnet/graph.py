"""Undirected simple graphs and their spectral-domain matrices.

A :class:`Graph` stores edges as unordered index pairs plus optional per-node
feature rows. From it the library derives the degree matrix, the
combinatorial Laplacian ``L = D - A``, and the self-loop-renormalized
adjacency used by graph convolutions. Neighbor sampling and k-nearest-neighbor
similarity-graph construction live here too, both seeded explicitly so runs
reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DegenerateFeatureError, ShapeError

__all__ = [
    "Graph",
    "NeighborSample",
    "adjacency_matrix",
    "degree_matrix",
    "laplacian",
    "normalized_adjacency",
    "neighbor_lists",
    "sample_neighbors",
    "knn_similarity_graph",
    "derive_seed",
    "read_edge_list",
    "write_edge_list",
    "read_features_csv",
    "write_features_csv",
]


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph: no self-loops, no duplicate edges.

    ``edges`` holds pairs normalized to ``u < v``. ``features``, when present,
    has one row per node.
    """

    node_count: int
    edges: frozenset = field(default_factory=frozenset)
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.node_count < 0:
            raise ValueError("node_count must be nonnegative")
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u} is not allowed")
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise ValueError(f"edge ({u}, {v}) endpoint out of range")
            if u > v:
                raise ValueError(f"edge ({u}, {v}) is not normalized to u < v")
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != self.node_count:
                raise ShapeError(
                    "features must have one row per node", feats.shape, (self.node_count,)
                )
            object.__setattr__(self, "features", feats)

    @classmethod
    def from_edges(cls, node_count: int, edges, features=None) -> "Graph":
        """Build a graph from an iterable of (u, v) pairs in either order."""
        normalized = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u} is not allowed")
            normalized.add((min(u, v), max(u, v)))
        return cls(node_count=node_count, edges=frozenset(normalized), features=features)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def degree(self, v: int) -> int:
        return sum(1 for u, w in self.edges if u == v or w == v)


def adjacency_matrix(g: Graph) -> np.ndarray:
    a = np.zeros((g.node_count, g.node_count))
    for u, v in g.edges:
        a[u, v] = 1.0
        a[v, u] = 1.0
    return a


def degree_matrix(g: Graph) -> np.ndarray:
    degrees = np.zeros(g.node_count, dtype=np.int64)
    for u, v in g.edges:
        degrees[u] += 1
        degrees[v] += 1
    return np.diag(degrees).astype(np.float64)


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian D - A, assembled in integer arithmetic."""
    lap = np.zeros((g.node_count, g.node_count), dtype=np.int64)
    for u, v in g.edges:
        lap[u, u] += 1
        lap[v, v] += 1
        lap[u, v] -= 1
        lap[v, u] -= 1
    return lap.astype(np.float64)


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Self-loop-renormalized adjacency D̃^(-1/2) (A + I) D̃^(-1/2).

    D̃ is the degree matrix of A + I, so every diagonal entry is at least 1
    and the division is always defined. The result is mirrored across the
    diagonal so symmetry holds bit-exactly.
    """
    tilde = adjacency_matrix(g) + np.eye(g.node_count)
    scale = 1.0 / np.sqrt(tilde.sum(axis=1))
    norm = scale[:, None] * tilde * scale[None, :]
    upper = np.triu(norm)
    return upper + np.triu(norm, 1).T


def neighbor_lists(g: Graph) -> list[list[int]]:
    """Sorted neighbor list per node."""
    nbrs: list[list[int]] = [[] for _ in range(g.node_count)]
    for u, v in g.edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    for lst in nbrs:
        lst.sort()
    return nbrs


@dataclass(frozen=True)
class NeighborSample:
    center: int
    sampled: tuple
    seed: int

    def __post_init__(self):
        if len(set(self.sampled)) != len(self.sampled):
            raise ValueError("sampled neighbors contain duplicates")


def sample_neighbors(g: Graph, v: int, k: int, seed: int) -> NeighborSample:
    """Uniform sample without replacement of min(k, deg(v)) neighbors of v.

    Deterministic for a fixed seed. A zero-degree node yields an empty
    sample; consumers decide how to aggregate nothing.
    """
    if not (0 <= v < g.node_count):
        raise ValueError(f"node {v} out of range for {g.node_count} nodes")
    if k < 1:
        raise ValueError("sample size k must be >= 1")
    nbrs = sorted(u if w == v else w for u, w in g.edges if u == v or w == v)
    if len(nbrs) <= k:
        return NeighborSample(center=v, sampled=tuple(nbrs), seed=seed)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(nbrs), size=k, replace=False)
    return NeighborSample(center=v, sampled=tuple(nbrs[i] for i in picked), seed=seed)


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one reproducible 64-bit seed."""
    words = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int(words.view(np.uint64)[0])


def knn_similarity_graph(features: np.ndarray, k: int) -> Graph:
    """Connect each row to its k most cosine-similar other rows, then symmetrize.

    Ties are broken toward the lower node index so construction is
    deterministic. The returned graph carries the input features.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError("features must be 2-D", feats.shape)
    n = feats.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise ValueError(f"need at least k+1 = {k + 1} rows, got {n}")
    norms = np.sqrt((feats * feats).sum(axis=1))
    for i, nrm in enumerate(norms):
        if nrm == 0.0:
            raise DegenerateFeatureError(i, "zero-norm feature row under cosine similarity")
    unit = feats / norms[:, None]
    sims = unit @ unit.T
    edges = set()
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (-sims[i, j], j))
        for j in order[:k]:
            edges.add((min(i, j), max(i, j)))
    return Graph(node_count=n, edges=frozenset(edges), features=feats)


# ---------------------------------------------------------------------------
# Fixture formats: edge-list text files and feature CSVs.
# ---------------------------------------------------------------------------


def write_edge_list(g: Graph, path) -> None:
    """One "u v" line per edge; a leading "# nodes N" comment preserves isolated nodes."""
    lines = [f"# nodes {g.node_count}"]
    lines += [f"{u} {v}" for u, v in g.sorted_edges()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edge_list(path, node_count: int | None = None) -> Graph:
    edges = []
    declared = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            fields = line[1:].split()
            if len(fields) == 2 and fields[0] == "nodes":
                declared = int(fields[1])
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: malformed edge line {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if node_count is None:
        node_count = declared
    if node_count is None:
        node_count = 1 + max((max(e) for e in edges), default=-1)
    return Graph.from_edges(node_count, edges)


def write_features_csv(features: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(features, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_features_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return data
