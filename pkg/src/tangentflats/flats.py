"""Affine flats fitted to clusters, projections and reconstruction error."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import load_matrix, save_matrix
from .grassmann import dominant_subspace

__all__ = [
    "Flat",
    "fit_flat",
    "fit_flats",
    "project",
    "residual_distance",
    "residuals",
    "msre",
    "save_flats",
    "load_flats",
]


@dataclass
class Flat:
    """Affine subspace ``origin + span(basis)`` with orthonormal ``N x d`` basis."""

    origin: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.basis.ndim != 2 or self.basis.shape[0] != self.origin.shape[0]:
            raise ValueError(
                f"basis shape {self.basis.shape} does not match origin {self.origin.shape}")
        if not np.all(np.isfinite(self.origin)):
            raise ValueError("flat origin is not finite")

    @property
    def N(self) -> int:
        return self.origin.shape[0]

    @property
    def d(self) -> int:
        return self.basis.shape[1]


def fit_flat(X, members, d) -> Flat:
    """Best ``d``-flat through the mean of ``X[members]`` (truncated SVD)."""
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("cannot fit a flat to an empty cluster")
    N = data.shape[1]
    if not 1 <= d <= N:
        raise ValueError(f"flat dimension must be in [1, {N}], got {d}")
    points = data[members]
    origin = points.mean(axis=0)
    return Flat(origin, dominant_subspace((points - origin).T, d))


def fit_flats(X, labels, d) -> list:
    """One flat per label ``0 .. max(labels)``."""
    labels = np.asarray(labels)
    return [fit_flat(X, np.flatnonzero(labels == c), d) for c in range(int(labels.max()) + 1)]


def _check_dim(flat, x):
    if x.shape[-1] != flat.N:
        raise ValueError(f"point dimension {x.shape[-1]} does not match flat dimension {flat.N}")


def project(flat: Flat, x):
    """Orthogonal projection of ``x`` (one point or rows of a matrix) onto ``flat``."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(flat, x)
    centered = x - flat.origin
    return flat.origin + (centered @ flat.basis) @ flat.basis.T


def residuals(flat: Flat, x):
    """Distance of each row of ``x`` to ``flat``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_dim(flat, x)
    centered = x - flat.origin
    resid = centered - (centered @ flat.basis) @ flat.basis.T
    return np.sqrt(np.einsum("ij,ij->i", resid, resid))


def residual_distance(flat: Flat, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("residual_distance takes a single point; use residuals()")
    return float(residuals(flat, x)[0])


def msre(X, labels, flats) -> float:
    """Mean over samples of the squared distance to the sample's own flat.

    ``flats`` is a sequence indexed by label or a mapping from label to flat.
    """
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    labels = np.asarray(getattr(labels, "labels", labels))
    if labels.shape != (data.shape[0],):
        raise ValueError(f"expected {data.shape[0]} labels, got shape {labels.shape}")
    lookup = flats if isinstance(flats, dict) else dict(enumerate(flats))
    total = 0.0
    for c in np.unique(labels):
        if int(c) not in lookup:
            raise KeyError(f"no flat for cluster label {c}")
        r = residuals(lookup[int(c)], data[labels == c])
        total += float(np.dot(r, r))
    return total / data.shape[0]


def save_flats(flats, directory) -> None:
    """Write ``manifest.json`` plus ``flat_XXXX_origin.f64`` / ``_basis.f64`` per flat."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, flat in enumerate(flats):
        origin_file = f"flat_{i:04d}_origin.f64"
        basis_file = f"flat_{i:04d}_basis.f64"
        save_matrix(directory / origin_file, flat.origin[None, :], format="raw-f64")
        save_matrix(directory / basis_file, flat.basis, format="raw-f64")
        entries.append({"label": i, "origin": origin_file, "basis": basis_file,
                        "N": flat.N, "d": flat.d})
    (directory / "manifest.json").write_text(json.dumps({"flats": entries}, indent=2))


def load_flats(directory) -> list:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    flats = []
    for entry in sorted(manifest["flats"], key=lambda e: e["label"]):
        origin = load_matrix(directory / entry["origin"], format="raw-f64").data[0]
        basis = load_matrix(directory / entry["basis"], format="raw-f64").data
        flats.append(Flat(origin, basis))
    return flats
