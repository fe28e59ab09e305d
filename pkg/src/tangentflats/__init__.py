"""Piecewise-linear manifold approximation.

Samples are grouped into connected clusters whose tangent spaces agree, then
each cluster is replaced by its best-fitting affine flat.
"""

__version__ = "0.1.0"

from .dataset import SampleSet, gen_s_curve, gen_swiss_roll, load_idx, load_matrix, save_matrix
from .graph import NeighborGraph, build_knn_graph, connected_components, is_feasible_cluster
from .grassmann import estimate_tangents, extrinsic_mean, projection_distance
from .clustering import InfeasibleClusteringError, Partition, acdt
from .flats import Flat, fit_flat, fit_flats, msre, project

__all__ = [
    "SampleSet",
    "gen_swiss_roll",
    "gen_s_curve",
    "load_matrix",
    "save_matrix",
    "load_idx",
    "NeighborGraph",
    "build_knn_graph",
    "connected_components",
    "is_feasible_cluster",
    "estimate_tangents",
    "extrinsic_mean",
    "projection_distance",
    "InfeasibleClusteringError",
    "Partition",
    "acdt",
    "Flat",
    "fit_flat",
    "fit_flats",
    "msre",
    "project",
]
