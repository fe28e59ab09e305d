"""Greedy agglomerative clustering of samples by the spread of their tangents.

Every sample starts as its own cluster. At each step the pair of
graph-adjacent clusters with the smallest merge cost is fused, until the
requested number of clusters remains. Only adjacent clusters may merge, so
every cluster stays connected in the neighbor graph.

Two merge costs are available:

``exact``
    Increase of the total tangent variance caused by the merge; requires the
    mean tangent of the union.
``bound``
    An upper bound on that increase built only from the two current means,
    the distance between them, and each cluster's cached sum of member
    distances. One projection distance per candidate pair.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .grassmann import (
    dominant_subspace,
    estimate_tangents,
    projection_distance,
    projection_distances,
    projection_distances_pairwise,
)
from .graph import NeighborGraph, build_knn_graph, connected_components, is_feasible_cluster

__all__ = [
    "Cluster",
    "Partition",
    "InfeasibleClusteringError",
    "GreedyMerger",
    "singleton_cluster",
    "dissimilarity_bound",
    "dissimilarity_exact",
    "merge",
    "acdt",
    "cut_history",
    "random_feasible_partition",
    "partition_objective",
]

log = logging.getLogger(__name__)

MODES = ("bound", "exact")


class InfeasibleClusteringError(ValueError):
    """Requested cluster count cannot be reached with connected clusters."""


@dataclass
class Cluster:
    """A live cluster with cached tangent statistics.

    ``dist_sum`` and ``sq_dist_sum`` are the sum of projection distances (and
    squared distances) from member tangents to ``mean``; ``sq_dist_sum`` is
    the cluster's tangent variance.
    """

    id: int
    members: np.ndarray
    mean: np.ndarray
    dist_sum: float
    sq_dist_sum: float
    neighbor_ids: set = field(default_factory=set)

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class Partition:
    """Final clusters and the per-sample label (``0 .. L-1``).

    Labels are numbered in order of each cluster's smallest member.
    ``history`` lists merges as ``(id_a, id_b, new_id, cost)``; singleton ids
    are the sample indices and merged clusters get ``m, m+1, ...``.
    """

    labels: np.ndarray
    clusters: list
    history: list = field(default_factory=list, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def objective(self) -> float:
        return float(sum(c.sq_dist_sum for c in self.clusters))

    def sizes(self) -> list:
        return [c.size for c in self.clusters]


def _mean_of_members(tangents, members):
    stack = tangents[members]
    k, N, d = stack.shape
    return dominant_subspace(np.transpose(stack, (1, 0, 2)).reshape(N, k * d), d)


def _cluster_stats(tangents, members, mean):
    dist = projection_distances(tangents[members], mean)
    return float(dist.sum()), float(np.dot(dist, dist))


def singleton_cluster(tangents, i, neighbor_ids=()) -> Cluster:
    return Cluster(int(i), np.array([i], dtype=np.int64), tangents[i], 0.0, 0.0,
                   set(int(j) for j in neighbor_ids))


def _bound(size, dist_sum, dist_between):
    return size * dist_between * dist_between + 2.0 * dist_between * dist_sum


def dissimilarity_bound(Ci: Cluster, Cj: Cluster) -> float:
    """Upper bound on the variance increase from merging ``Ci`` and ``Cj``.

    ``(|Ci| + |Cj|) D^2 + 2 D (dist_sum(Ci) + dist_sum(Cj))`` with ``D`` the
    projection distance between the two mean tangents.
    """
    D = projection_distance(Ci.mean, Cj.mean)
    return _bound(Ci.size + Cj.size, Ci.dist_sum + Cj.dist_sum, D)


def dissimilarity_exact(Ci: Cluster, Cj: Cluster, tangents) -> float:
    """Increase of tangent variance caused by merging ``Ci`` and ``Cj``."""
    if Ci.mean.shape != tangents.shape[1:] or Cj.mean.shape != tangents.shape[1:]:
        raise ValueError("cluster means do not match tangent dimensions")
    members = np.concatenate([Ci.members, Cj.members])
    mean = _mean_of_members(tangents, members)
    _, p_union = _cluster_stats(tangents, members, mean)
    return p_union - Ci.sq_dist_sum - Cj.sq_dist_sum


def merge(Ci: Cluster, Cj: Cluster, tangents, new_id=None) -> Cluster:
    """Fuse two adjacent clusters, recomputing the mean over all member tangents.

    ``new_id`` defaults to the smaller of the two ids. The neighbor set of the
    result is the union of both neighbor sets minus the two parents; updating
    the neighbors' own sets is the caller's job.

    Raises
    ------
    InfeasibleClusteringError
        If the clusters share no graph edge.
    """
    if Cj.id not in Ci.neighbor_ids or Ci.id not in Cj.neighbor_ids:
        raise InfeasibleClusteringError(
            f"clusters {Ci.id} and {Cj.id} are not adjacent in the neighbor graph")
    members = np.sort(np.concatenate([Ci.members, Cj.members]))
    mean = _mean_of_members(tangents, members)
    dist_sum, sq_dist_sum = _cluster_stats(tangents, members, mean)
    nb = (Ci.neighbor_ids | Cj.neighbor_ids) - {Ci.id, Cj.id}
    return Cluster(min(Ci.id, Cj.id) if new_id is None else int(new_id),
                   members, mean, dist_sum, sq_dist_sum, nb)


class GreedyMerger:
    """Stateful merge loop; :func:`acdt` drives it to completion.

    Candidates sit in a heap keyed by ``(cost, smaller id, larger id)`` so ties
    go to the smallest id pair. A merge retires both parent ids, and heap
    entries that mention a retired id are discarded when popped. Costs of
    pairs whose clusters did not change are never recomputed: they stay
    valid because neither cluster's data moved.

    Parameters
    ----------
    graph : NeighborGraph
    tangents : ndarray, shape (m, N, d)
    mode : {"bound", "exact"}
    debug : bool
        Check connectivity of every newly formed cluster.
    """

    def __init__(self, graph: NeighborGraph, tangents, mode="bound", debug=False):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        tangents = np.asarray(tangents, dtype=np.float64)
        if tangents.ndim != 3 or tangents.shape[0] != graph.n:
            raise ValueError("need one tangent basis per graph node")
        self.graph = graph
        self.tangents = tangents
        self.mode = mode
        self.debug = debug
        self.m = graph.n
        self.clusters = {
            i: singleton_cluster(tangents, i, graph.neighbors(i)) for i in range(self.m)}
        self.next_id = self.m
        self.history = []
        self.n_evaluations = 0
        self._heap = []
        edges = graph.edges()
        if len(edges):
            costs = self._initial_costs(edges)
            self._heap = [(float(c), int(a), int(b)) for c, (a, b) in zip(costs, edges)]
            heapq.heapify(self._heap)

    def _initial_costs(self, edges):
        # all clusters are singletons here: mean = own tangent, dist_sum = 0
        self.n_evaluations += len(edges)
        if self.mode == "bound":
            D = projection_distances_pairwise(self.tangents[edges[:, 0]],
                                              self.tangents[edges[:, 1]])
            return 2.0 * D * D
        return np.array([self._exact_cost(self.clusters[a], self.clusters[b])
                         for a, b in edges])

    def _exact_cost(self, Ci, Cj):
        return dissimilarity_exact(Ci, Cj, self.tangents)

    def cost(self, a: int, b: int) -> float:
        Ci, Cj = self.clusters[a], self.clusters[b]
        if self.mode == "bound":
            return dissimilarity_bound(Ci, Cj)
        return self._exact_cost(Ci, Cj)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def candidate_pairs(self):
        """Adjacent live cluster pairs ``(a, b)`` with ``a < b``."""
        return sorted((a, b) for a, c in self.clusters.items()
                      for b in c.neighbor_ids if a < b)

    def _pop_best(self):
        heap = self._heap
        while heap:
            cost, a, b = heapq.heappop(heap)
            if a in self.clusters and b in self.clusters:
                return cost, a, b
        return None

    def step(self) -> bool:
        """Perform one merge; returns ``False`` when no adjacent pair is left."""
        best = self._pop_best()
        if best is None:
            return False
        cost, a, b = best
        Ca, Cb = self.clusters.pop(a), self.clusters.pop(b)
        new = merge(Ca, Cb, self.tangents, new_id=self.next_id)
        self.next_id += 1
        if self.debug and not is_feasible_cluster(self.graph, new.members):
            raise AssertionError(f"merged cluster {new.id} is not connected")
        for j in new.neighbor_ids:
            nb = self.clusters[j].neighbor_ids
            nb.discard(a)
            nb.discard(b)
            nb.add(new.id)
        self.clusters[new.id] = new
        self.history.append((a, b, new.id, cost))
        self._push_candidates(new)
        if len(self.history) % 100 == 0:
            log.debug("%d merges done, %d clusters left", len(self.history), self.n_clusters)
        return True

    def _push_candidates(self, new: Cluster):
        nb_ids = sorted(new.neighbor_ids)
        if not nb_ids:
            return
        self.n_evaluations += len(nb_ids)
        if self.mode == "bound":
            means = np.stack([self.clusters[j].mean for j in nb_ids])
            D = projection_distances(means, new.mean)
            sizes = np.array([self.clusters[j].size for j in nb_ids]) + new.size
            sums = np.array([self.clusters[j].dist_sum for j in nb_ids]) + new.dist_sum
            costs = _bound(sizes, sums, D)
        else:
            costs = [self._exact_cost(self.clusters[j], new) for j in nb_ids]
        for j, c in zip(nb_ids, costs):
            # new ids are always the largest, so (j, new.id) is already ordered
            heapq.heappush(self._heap, (float(c), j, new.id))

    def run(self, L: int):
        while self.n_clusters > L:
            if not self.step():
                break
        return self

    def partition(self) -> Partition:
        clusters = sorted(self.clusters.values(), key=lambda c: c.members[0])
        labels = np.empty(self.m, dtype=np.int64)
        for label, c in enumerate(clusters):
            labels[c.members] = label
        return Partition(labels, clusters, list(self.history))


def acdt(X, k, L, d, mode="bound", *, graph=None, tangents=None, threads=1, debug=False):
    """Partition samples into ``L`` connected clusters of similar tangents.

    Parameters
    ----------
    X : SampleSet or ndarray of shape (m, N)
    k : int
        Neighbors per sample in the k-NN graph.
    L : int
        Number of clusters to stop at.
    d : int
        Dimension of tangent spaces and of the flats fitted later.
    mode : {"bound", "exact"}
        Merge cost; see the module docstring.
    graph, tangents : optional
        Precomputed k-NN graph and ``(m, N, d)`` tangents, to skip step one.
    threads : int
        Worker threads for graph and tangent estimation.
    debug : bool
        Verify connectivity of every cluster as it is formed.

    Returns
    -------
    Partition

    Raises
    ------
    InfeasibleClusteringError
        If ``L`` is below the number of connected components of the graph,
        or above ``m``.
    """
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    m, N = data.shape
    if not 1 <= d <= N:
        raise ValueError(f"d must be in [1, {N}], got {d}")
    if L > m:
        raise InfeasibleClusteringError(f"cannot form {L} clusters from {m} samples")
    if L < 1:
        raise InfeasibleClusteringError("need at least one cluster")
    if graph is None:
        graph = build_knn_graph(data, k, threads=threads)
    n_components = int(connected_components(graph).max()) + 1
    if L < n_components:
        raise InfeasibleClusteringError(
            f"the neighbor graph has {n_components} connected components; "
            f"cannot form fewer than {n_components} connected clusters (asked for {L})")
    if tangents is None:
        tangents = estimate_tangents(data, graph, d, threads=threads)
    merger = GreedyMerger(graph, tangents, mode=mode, debug=debug).run(L)
    return merger.partition()


def cut_history(m, history, L):
    """Labels after replaying the first ``m - L`` merges of ``history``.

    The merge order does not depend on the stopping point, so a single run to
    a small ``L`` yields the partition for every larger cluster count.
    """
    steps = m - L
    if steps < 0 or steps > len(history):
        raise ValueError(f"history of {len(history)} merges cannot reach {L} clusters")
    parent = {}
    for a, b, c, _ in history[:steps]:
        parent[a] = c
        parent[b] = c

    def root(x):
        path = []
        while x in parent:
            path.append(x)
            x = parent[x]
        for p in path:
            parent[p] = x
        return x

    roots = np.array([root(i) for i in range(m)])
    _, first = np.unique(roots, return_index=True)
    # label clusters in order of smallest member
    order = np.argsort(first)
    remap = {int(roots[first[o]]): label for label, o in enumerate(order)}
    return np.array([remap[int(r)] for r in roots], dtype=np.int64)


def random_feasible_partition(graph: NeighborGraph, L: int, seed=0):
    """Merge random adjacent cluster pairs until ``L`` clusters remain.

    Each step fuses the two clusters joined by a uniformly random edge among
    those that still cross between clusters. Used as a structure-blind
    baseline.
    """
    rng = np.random.default_rng(seed)
    edges = graph.edges()[rng.permutation(graph.n_edges)]
    parent = np.arange(graph.n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    remaining = graph.n
    for a, b in edges:
        if remaining <= L:
            break
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            remaining -= 1
    if remaining > L:
        raise InfeasibleClusteringError(
            f"graph components allow at least {remaining} clusters, asked for {L}")
    roots = np.array([find(i) for i in range(graph.n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels.astype(np.int64)


def partition_objective(tangents, labels) -> float:
    """Total tangent variance of a labeling, computed from scratch."""
    total = 0.0
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        mean = _mean_of_members(tangents, members)
        total += _cluster_stats(tangents, members, mean)[1]
    return total
