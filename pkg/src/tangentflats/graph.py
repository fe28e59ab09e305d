"""Symmetric k-nearest-neighbor graph over a sample set."""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

__all__ = [
    "NeighborGraph",
    "build_knn_graph",
    "neighbors",
    "connected_components",
    "is_feasible_cluster",
    "save_edge_list",
]

# rows of the distance matrix processed per block; bounds memory at m * 512 floats
_BLOCK = 512


@dataclass(frozen=True)
class NeighborGraph:
    """Undirected graph in CSR layout; ``indices[indptr[i]:indptr[i+1]]`` is sorted."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, i: int) -> np.ndarray:
        return neighbors(self, i)

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> np.ndarray:
        """``(E, 2)`` array of edges ``(i, j)`` with ``i < j``, sorted."""
        rows = np.repeat(np.arange(self.n), self.degree())
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def to_sparse(self) -> sparse.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.int8)
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @classmethod
    def from_edges(cls, n: int, edges) -> "NeighborGraph":
        """Build from an iterable of ``(i, j)`` pairs; self-loops are dropped."""
        edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                           dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise IndexError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]])
        return cls._from_directed(n, both)

    @classmethod
    def _from_directed(cls, n, pairs) -> "NeighborGraph":
        key = np.unique(pairs[:, 0] * n + pairs[:, 1])
        rows, cols = np.divmod(key, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols.astype(np.int64))


def _knn_block(data, sq_norms, start, stop, k):
    block = data[start:stop]
    d2 = sq_norms[start:stop, None] + sq_norms[None, :] - 2.0 * block @ data.T
    np.maximum(d2, 0.0, out=d2)
    rows = np.arange(stop - start)
    d2[rows, rows + start] = np.inf
    # The expansion above is only accurate to rounding, so it selects a
    # candidate superset; ranking uses exact differences with index tie-break.
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    slack = 1e-9 * (sq_norms[start:stop] + sq_norms.max()) + 1e-300
    out = np.empty((stop - start, k), dtype=np.int64)
    for r in rows:
        cand = np.flatnonzero(d2[r] <= kth[r] + slack[r])
        exact = np.sum((data[cand] - block[r]) ** 2, axis=1)
        out[r] = cand[np.lexsort((cand, exact))[:k]]
    return out


def build_knn_graph(X, k: int, threads: int = 1) -> NeighborGraph:
    """Exact k-NN graph symmetrized by union.

    ``(i, j)`` is an edge when ``j`` is among the ``k`` nearest samples of
    ``i`` or vice versa. Equal distances are resolved in favor of the smaller
    index.

    Parameters
    ----------
    X : SampleSet or ndarray of shape (m, N)
    k : int
        Neighbors per sample, ``1 <= k < m``.
    threads : int
        Worker threads over row blocks; the result does not depend on it.
    """
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    m = data.shape[0]
    if not 1 <= k < m:
        raise ValueError(f"k must satisfy 1 <= k < m (k={k}, m={m})")
    sq_norms = np.einsum("ij,ij->i", data, data)
    starts = list(range(0, m, _BLOCK))
    work = lambda s: _knn_block(data, sq_norms, s, min(s + _BLOCK, m), k)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(work, starts))
    else:
        blocks = [work(s) for s in starts]
    nearest = np.concatenate(blocks)
    src = np.repeat(np.arange(m), k)
    dst = nearest.ravel()
    pairs = np.concatenate([np.column_stack([src, dst]), np.column_stack([dst, src])])
    return NeighborGraph._from_directed(m, pairs)


def neighbors(G: NeighborGraph, i: int) -> np.ndarray:
    if not 0 <= i < G.n:
        raise IndexError(f"node {i} out of range for graph with {G.n} nodes")
    return G.indices[G.indptr[i]:G.indptr[i + 1]]


def connected_components(G: NeighborGraph) -> np.ndarray:
    """Component id per node, numbered in order of each component's smallest node."""
    _, labels = csgraph.connected_components(G.to_sparse(), directed=False)
    # relabel so ids appear in node order
    _, first = np.unique(labels, return_index=True)
    remap = np.empty_like(first)
    remap[np.argsort(first)] = np.arange(len(first))
    return remap[labels]


def is_feasible_cluster(G: NeighborGraph, members) -> bool:
    """True when the subgraph induced by ``members`` is connected."""
    members = np.unique(np.asarray(members, dtype=np.int64))
    if members.size == 0:
        raise ValueError("cluster has no members")
    if members[0] < 0 or members[-1] >= G.n:
        raise IndexError("member index out of range")
    if members.size == 1:
        return True
    inside = np.zeros(G.n, dtype=bool)
    inside[members] = True
    seen = np.zeros(G.n, dtype=bool)
    seen[members[0]] = True
    queue = deque([members[0]])
    reached = 1
    while queue:
        u = queue.popleft()
        nb = G.indices[G.indptr[u]:G.indptr[u + 1]]
        nb = nb[inside[nb] & ~seen[nb]]
        seen[nb] = True
        reached += len(nb)
        queue.extend(nb.tolist())
    return reached == members.size


def save_edge_list(G: NeighborGraph, path) -> None:
    """Write ``"i j"`` per edge with ``i < j``, sorted."""
    lines = [f"{i} {j}\n" for i, j in G.edges()]
    Path(path).write_text("".join(lines))
