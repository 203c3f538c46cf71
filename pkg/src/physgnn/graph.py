"""Immutable undirected graphs, Laplacians and basic graph functionals."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    EmptyOrFullSubset,
    GraphError,
    IsolatedNodeError,
    TooLargeForEnumeration,
)


class LaplacianKind(str, enum.Enum):
    COMBINATORIAL = "combinatorial"
    NORMALIZED = "normalized"
    RANDOM_WALK = "random_walk"


@dataclass(frozen=True)
class SparseGraph:
    """Undirected, unweighted graph stored as a symmetric CSR adjacency.

    Build instances with :meth:`from_edges`; it canonicalizes the edge list
    (both orientations collapse to one pair, duplicates and self-loops are
    dropped) and records how many raw rows were discarded.
    """

    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, i < j, lexicographically sorted
    adjacency: sp.csr_matrix = field(repr=False)
    degrees: np.ndarray = field(repr=False)
    dropped_duplicates: int = 0
    dropped_self_loops: int = 0

    @classmethod
    def from_edges(cls, num_nodes, edges) -> "SparseGraph":
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise GraphError("num_nodes must be nonnegative")
        raw = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
        if raw.size and (raw.min() < 0 or raw.max() >= num_nodes):
            bad = raw[(raw < 0).any(axis=1) | (raw >= num_nodes).any(axis=1)][0]
            raise GraphError(f"edge {tuple(bad)} references a node outside [0, {num_nodes})")
        loops = raw[:, 0] == raw[:, 1]
        kept = raw[~loops]
        pairs = np.sort(kept, axis=1)
        uniq = np.unique(pairs, axis=0) if len(pairs) else pairs
        rows = np.concatenate([uniq[:, 0], uniq[:, 1]])
        cols = np.concatenate([uniq[:, 1], uniq[:, 0]])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_nodes, num_nodes))
        adj.sort_indices()
        degrees = np.asarray(adj.sum(axis=1)).ravel().astype(np.int64)
        for arr in (uniq, degrees, adj.data, adj.indices, adj.indptr):
            arr.setflags(write=False)
        return cls(
            num_nodes=num_nodes,
            edges=uniq,
            adjacency=adj,
            degrees=degrees,
            dropped_duplicates=int(len(pairs) - len(uniq)),
            dropped_self_loops=int(loops.sum()),
        )

    @property
    def num_edges(self) -> int:
        return int(len(self.edges))

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.toarray()

    def connected_components(self) -> tuple[int, np.ndarray]:
        n, labels = sp.csgraph.connected_components(self.adjacency, directed=False)
        return int(n), labels

    def is_connected(self) -> bool:
        return self.num_nodes > 0 and self.connected_components()[0] == 1

    def permuted(self, perm) -> "SparseGraph":
        """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
        perm = np.asarray(perm)
        return SparseGraph.from_edges(self.num_nodes, perm[self.edges] if len(self.edges) else [])


def _degree_for_normalization(graph: SparseGraph, strict: bool) -> np.ndarray:
    deg = graph.degrees.astype(float)
    if np.any(deg == 0):
        if strict:
            isolated = np.flatnonzero(deg == 0)
            raise IsolatedNodeError(f"{len(isolated)} isolated node(s), first is {isolated[0]}")
        # unit self-loop enters D only; A is left untouched
        deg = np.where(deg == 0, 1.0, deg)
    return deg


def build_laplacian(graph: SparseGraph, kind=LaplacianKind.COMBINATORIAL, strict: bool = False) -> sp.csr_matrix:
    kind = LaplacianKind(kind)
    n = graph.num_nodes
    a = graph.adjacency
    eye = sp.identity(n, format="csr")
    if kind is LaplacianKind.COMBINATORIAL:
        lap = sp.diags(graph.degrees.astype(float)) - a
    else:
        deg = _degree_for_normalization(graph, strict)
        if kind is LaplacianKind.NORMALIZED:
            d = sp.diags(1.0 / np.sqrt(deg))
            lap = eye - d @ a @ d
        else:
            lap = eye - sp.diags(1.0 / deg) @ a
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    return lap


def dirichlet_energy(laplacian, signal) -> float:
    f = np.asarray(signal, dtype=float)
    if f.ndim != 1 or laplacian.shape[0] != f.shape[0]:
        raise DimensionMismatch(f"laplacian is {laplacian.shape}, signal has shape {f.shape}")
    return float(f @ (laplacian @ f))


def _check_subset(graph: SparseGraph, subset) -> np.ndarray:
    mask = np.zeros(graph.num_nodes, dtype=bool)
    mask[np.asarray(list(subset), dtype=np.int64)] = True
    if not mask.any() or mask.all():
        raise EmptyOrFullSubset("subset must be nonempty and proper")
    return mask


def conductance(graph: SparseGraph, subset) -> float:
    mask = _check_subset(graph, subset)
    e = graph.edges
    boundary = int(np.count_nonzero(mask[e[:, 0]] != mask[e[:, 1]])) if len(e) else 0
    vol_s = graph.degrees[mask].sum()
    vol_rest = graph.degrees[~mask].sum()
    denom = min(vol_s, vol_rest)
    if denom == 0:
        return float("inf") if boundary else 0.0
    return boundary / float(denom)


def min_conductance_bruteforce(graph: SparseGraph, max_nodes: int = 16):
    """Exhaustive minimum conductance; returns ``(h_G, attaining_subset)``."""
    n = graph.num_nodes
    if n > max_nodes:
        raise TooLargeForEnumeration(f"{n} nodes exceeds enumeration limit {max_nodes}")
    if n < 2:
        raise EmptyOrFullSubset("need at least two nodes for a proper subset")
    # node n-1 is fixed outside S; the complement covers the other half
    codes = np.arange(1, 2 ** (n - 1), dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    deg = graph.degrees
    vol_s = bits @ deg
    vol_rest = deg.sum() - vol_s
    e = graph.edges
    if len(e):
        boundary = np.count_nonzero(bits[:, e[:, 0]] != bits[:, e[:, 1]], axis=1)
    else:
        boundary = np.zeros(len(codes), dtype=np.int64)
    denom = np.minimum(vol_s, vol_rest).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(denom > 0, boundary / np.where(denom > 0, denom, 1.0), np.where(boundary > 0, np.inf, 0.0))
    best = int(np.argmin(h))
    return float(h[best]), frozenset(np.flatnonzero(bits[best]).tolist())


def path_graph(n: int) -> SparseGraph:
    return SparseGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> SparseGraph:
    return SparseGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> SparseGraph:
    return SparseGraph.from_edges(n, list(itertools.combinations(range(n), 2)))


def star_graph(n_leaves: int) -> SparseGraph:
    return SparseGraph.from_edges(n_leaves + 1, [(0, i) for i in range(1, n_leaves + 1)])


def random_connected_graph(n: int, p: float, rng: np.random.Generator) -> SparseGraph:
    """Erdos-Renyi G(n, p) with a random spanning tree added so it is connected."""
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    edges = list(zip(iu[0][keep], iu[1][keep]))
    order = rng.permutation(n)
    for k in range(1, n):
        edges.append((order[k], order[rng.integers(0, k)]))
    return SparseGraph.from_edges(n, edges)
