"""Classification with distances to per-class flats as features.

Each class is approximated by a few flats. A sample's feature vector is its
distance to every flat of every class, and prediction is 1-nearest-neighbor
in that feature space. A global PCA projection with the same nearest-neighbor
rule serves as the reduced-dimension baseline.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import acdt
from .flats import fit_flats, load_flats, residuals, save_flats

__all__ = [
    "FlatFeatureModel",
    "PCAProjector",
    "train",
    "featurize",
    "predict",
    "nearest_neighbor_predict",
    "pca_baseline",
    "class_seed",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

# query rows per block in nearest-neighbor search
_NN_BLOCK = 256


@dataclass
class FlatFeatureModel:
    """``flats[c]`` are the flats of ``classes[c]``; features follow that order."""

    classes: list
    flats: list

    def __post_init__(self):
        dims = {f.N for group in self.flats for f in group}
        if len(dims) > 1:
            raise ValueError(f"flats live in different ambient dimensions {sorted(dims)}")
        if len(self.classes) != len(self.flats):
            raise ValueError("need one list of flats per class")

    @property
    def N(self) -> int:
        return self.flats[0][0].N

    @property
    def feature_dim(self) -> int:
        return sum(len(group) for group in self.flats)

    def all_flats(self) -> list:
        return [f for group in self.flats for f in group]


def class_seed(seed: int, label: int) -> np.random.SeedSequence:
    """Per-class random stream derived from the master seed and the class label."""
    return np.random.SeedSequence([int(seed), int(label)])


def _class_data(per_class):
    if isinstance(per_class, dict):
        items = sorted(per_class.items())
    else:
        samples = per_class
        items = [(int(c), samples.data[samples.labels == c])
                 for c in np.unique(samples.labels)]
    return [(c, np.asarray(getattr(x, "data", x), dtype=np.float64)) for c, x in items]


def train(per_class, n_flats, k, d, mode="bound", threads=1) -> FlatFeatureModel:
    """Approximate each class by ``n_flats`` flats.

    Parameters
    ----------
    per_class : dict or SampleSet
        Mapping label -> samples, or a labeled SampleSet split by label.
    n_flats, k, d : int
        Flats per class, neighbors in each class graph, flat dimension.
    threads : int
        Classes are processed concurrently by this many workers.
    """
    groups = _class_data(per_class)

    def one(item):
        label, data = item
        return fit_flats(data, _class_partition(data, n_flats, k, d, mode), d)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            flats = list(pool.map(one, groups))
    else:
        flats = [one(g) for g in groups]
    return FlatFeatureModel([c for c, _ in groups], flats)


def _class_partition(data, n_flats, k, d, mode):
    m = len(data)
    if m <= n_flats:
        # too few samples to merge: every sample is its own cluster
        return np.arange(m)
    k_eff = min(k, m - 1)
    if k_eff < k:
        log.warning("only %d samples in class; using k=%d", m, k_eff)
    return acdt(data, k_eff, n_flats, d, mode=mode).labels


def featurize(model: FlatFeatureModel, x):
    """Distances to every flat, class-major; one row per sample in ``x``."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.N:
        raise ValueError(f"sample dimension {x.shape[1]} does not match model dimension {model.N}")
    features = np.column_stack([residuals(f, x) for f in model.all_flats()])
    return features[0] if single else features


def nearest_neighbor_predict(bank, bank_labels, queries):
    """Label of the Euclidean-nearest bank row for each query; ties go to the lower index."""
    bank = np.asarray(bank, dtype=np.float64)
    bank_labels = np.asarray(bank_labels)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(bank) == 0:
        raise ValueError("empty training bank")
    if queries.shape[1] != bank.shape[1]:
        raise ValueError("query and bank dimensions differ")
    bank_sq = np.einsum("ij,ij->i", bank, bank)
    out = np.empty(len(queries), dtype=bank_labels.dtype)
    for start in range(0, len(queries), _NN_BLOCK):
        q = queries[start:start + _NN_BLOCK]
        # ||q||^2 is constant per row and dropped
        d2 = bank_sq[None, :] - 2.0 * q @ bank.T
        out[start:start + len(q)] = bank_labels[np.argmin(d2, axis=1)]
    return out


def predict(model, train_features, train_labels, x):
    """Predicted label(s) for ``x`` by nearest training feature vector."""
    feats = featurize(model, x)
    pred = nearest_neighbor_predict(train_features, train_labels, np.atleast_2d(feats))
    return pred[0] if np.ndim(feats) == 1 else pred


@dataclass
class PCAProjector:
    mean: np.ndarray
    components: np.ndarray  # (dims, N), rows orthonormal
    explained_variance: np.ndarray

    def transform(self, x):
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        return (x - self.mean) @ self.components.T

    def inverse_transform(self, z):
        return np.asarray(z) @ self.components + self.mean


def pca_baseline(train_data, dims=100) -> PCAProjector:
    """Global PCA on pooled training samples, keeping ``dims`` components."""
    data = np.asarray(getattr(train_data, "data", train_data), dtype=np.float64)
    m, N = data.shape
    if not 1 <= dims <= N:
        raise ValueError(f"dims must be in [1, {N}], got {dims}")
    mean = data.mean(axis=0)
    _, s, vt = np.linalg.svd(data - mean, full_matrices=False)
    comps = np.zeros((dims, N))
    avail = min(dims, vt.shape[0])
    comps[:avail] = vt[:avail]
    if avail < dims:
        # fewer samples than dims: pad with an orthonormal complement
        q, _ = np.linalg.qr(np.vstack([vt, np.eye(N)]).T)
        comps[avail:] = q[:, avail:dims].T
    var = np.zeros(dims)
    var[:min(dims, len(s))] = (s[:dims] ** 2) / max(m - 1, 1)
    return PCAProjector(mean, comps, var)


def save_model(model: FlatFeatureModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"classes": [int(c) for c in model.classes], "groups": []}
    for c, group in zip(model.classes, model.flats):
        sub = f"class_{int(c)}"
        save_flats(group, directory / sub)
        manifest["groups"].append(sub)
    (directory / "model.json").write_text(json.dumps(manifest, indent=2))


def load_model(directory) -> FlatFeatureModel:
    directory = Path(directory)
    manifest = json.loads((directory / "model.json").read_text())
    flats = [load_flats(directory / sub) for sub in manifest["groups"]]
    return FlatFeatureModel(manifest["classes"], flats)
