"""Tangent subspaces and their geometry on the Grassmann manifold.

A point of the Grassmannian is carried as an ``N x d`` ndarray with
orthonormal columns. Any such basis stands for its span; two bases are the
same point exactly when their projection distance is zero. Stacks of bases
are ``(k, N, d)`` arrays.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh

__all__ = [
    "GeometryError",
    "is_orthonormal",
    "complete_basis",
    "dominant_subspace",
    "estimate_tangent",
    "estimate_tangents",
    "projection_distance",
    "projection_distances",
    "projection_distances_pairwise",
    "extrinsic_mean",
    "sum_sq_dist_to_mean",
]

# above this many columns on both sides, the top-d subspace comes from a
# Lanczos solve instead of a dense SVD
DENSE_LIMIT = 160


class GeometryError(ArithmeticError):
    """A distance came out of its admissible range by more than rounding."""


def is_orthonormal(basis, tol=1e-8) -> bool:
    basis = np.asarray(basis)
    gram = basis.T @ basis
    return bool(np.max(np.abs(gram - np.eye(basis.shape[1])), initial=0.0) < tol)


def complete_basis(directions, N, d):
    """Pad orthonormal ``directions`` (``N x r``, ``r <= d``) to ``N x d``.

    Standard basis vectors ``e_1, e_2, ...`` are orthogonalized against the
    current columns and appended in order, skipping those already (nearly)
    in the span.
    """
    cols = [directions[:, j] for j in range(directions.shape[1])]
    for axis in range(N):
        if len(cols) >= d:
            break
        v = np.zeros(N)
        v[axis] = 1.0
        # two Gram-Schmidt passes keep the result orthogonal to working precision
        for _ in range(2):
            for c in cols:
                v -= (c @ v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            cols.append(v / norm)
    return np.column_stack(cols) if cols else np.zeros((N, 0))


def _rank(s, shape):
    if s.size == 0 or s[0] <= 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.count_nonzero(s > tol))


def dominant_subspace(S, d):
    """Orthonormal basis of the top-``d`` left singular subspace of ``S`` (``N x c``).

    Singular directions are kept in descending order of singular value;
    equal values keep LAPACK's order. Rank-deficient input is padded with
    :func:`complete_basis`.
    """
    S = np.asarray(S, dtype=np.float64)
    N, c = S.shape
    if d > N:
        raise ValueError(f"subspace dimension {d} exceeds ambient dimension {N}")
    if min(N, c) > DENSE_LIMIT and d < min(N, c) // 2:
        basis = _lanczos_subspace(S, d)
        if basis is not None:
            return basis
    u, s, _ = np.linalg.svd(S, full_matrices=False)
    order = np.argsort(-s, kind="stable")
    u, s = u[:, order], s[order]
    r = min(_rank(s, S.shape), d)
    if r == d:
        return u[:, :d]
    return complete_basis(u[:, :r], N, d)


def _lanczos_subspace(S, d):
    N, c = S.shape
    op = LinearOperator((N, N), matvec=lambda v: S @ (S.T @ v), dtype=np.float64)
    # fixed start vector keeps ARPACK deterministic
    v0 = S @ np.ones(c)
    if not np.any(v0):
        v0 = np.ones(N)
    try:
        vals, vecs = eigsh(op, k=d, which="LA", v0=v0, tol=0.0,
                           ncv=min(N, max(2 * d + 1, 20)), maxiter=50 * N)
    except (ArpackNoConvergence, ArpackError):
        return None
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    if vals[-1] <= vals[0] * N * np.finfo(float).eps:
        return None
    basis, _ = np.linalg.qr(vecs[:, order])
    return basis


def estimate_tangent(X, G, i, d):
    """Tangent subspace at sample ``i`` from its graph neighborhood.

    Neighbors are shifted so that sample ``i`` sits at the origin; the
    returned ``N x d`` basis spans their best rank-``d`` fit.

    Raises
    ------
    ValueError
        If ``i`` is isolated or ``d`` exceeds the ambient dimension.
    """
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    N = data.shape[1]
    if not 1 <= d <= N:
        raise ValueError(f"tangent dimension must be in [1, {N}], got {d}")
    nb = G.neighbors(i)
    if len(nb) == 0:
        raise ValueError(f"sample {i} has no neighbors")
    shifted = data[nb] - data[i]
    return dominant_subspace(shifted.T, d)


def estimate_tangents(X, G, d, threads=1):
    """Tangent bases for every sample as a ``(m, N, d)`` array."""
    data = np.asarray(getattr(X, "data", X), dtype=np.float64)
    m, N = data.shape
    if not 1 <= d <= N:
        raise ValueError(f"tangent dimension must be in [1, {N}], got {d}")
    isolated = np.flatnonzero(G.degree() == 0)
    if len(isolated):
        raise ValueError(f"sample {isolated[0]} has no neighbors")
    out = np.empty((m, N, d))

    def fill(chunk):
        for i in chunk:
            out[i] = estimate_tangent(data, G, i, d)

    chunks = np.array_split(np.arange(m), max(1, threads) * 4)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, chunks))
    else:
        for chunk in chunks:
            fill(chunk)
    return out


def _check_radicand(r, d):
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < -1e-9) or np.any(r > d + 1e-9):
        raise GeometryError(f"projection-metric radicand {r} outside [0, {d}]")
    return np.clip(r, 0.0, d)


def _radicand(A, B):
    # d - ||A^T B||_F^2 loses all precision near zero distance; for orthonormal
    # A, B it equals ||B - A A^T B||_F^2 (and its mirror), a plain sum of squares.
    # Averaging both orders makes the result exactly symmetric.
    AtB = np.matmul(np.swapaxes(A, -1, -2), B)
    r1 = B - np.matmul(A, AtB)
    r2 = A - np.matmul(B, np.swapaxes(AtB, -1, -2))
    return 0.5 * (np.sum(r1 * r1, axis=(-2, -1)) + np.sum(r2 * r2, axis=(-2, -1)))


def projection_distance(A, B) -> float:
    """Projection metric ``sqrt(d - ||A^T B||_F^2)`` between two spans."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"basis shapes differ: {A.shape} vs {B.shape}")
    return float(np.sqrt(_check_radicand(_radicand(A, B), A.shape[1])))


def projection_distances(stack, B):
    """Projection distance from every basis in ``stack`` (``k x N x d``) to ``B``."""
    stack = np.asarray(stack, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if stack.shape[1:] != B.shape:
        raise ValueError(f"basis shapes differ: {stack.shape[1:]} vs {B.shape}")
    return np.sqrt(_check_radicand(_radicand(stack, B[None]), B.shape[1]))


def _as_stack(bases):
    if isinstance(bases, np.ndarray) and bases.ndim == 3:
        stack = bases
    else:
        bases = list(bases)
        if not bases:
            raise ValueError("need at least one basis")
        shapes = {np.shape(b) for b in bases}
        if len(shapes) != 1:
            raise ValueError(f"bases have mismatched shapes {sorted(shapes)}")
        stack = np.stack(bases)
    if stack.shape[0] == 0:
        raise ValueError("need at least one basis")
    return np.asarray(stack, dtype=np.float64)


def extrinsic_mean(bases, weights=None):
    """Weighted extrinsic mean of subspaces.

    Returns the span of the top-``d`` eigenvectors of the weighted average of
    the projection matrices ``M M^T``. That matrix is never formed: the
    stack ``[sqrt(w_1) M_1 | ... | sqrt(w_k) M_k]`` has it (times the weight
    total) as its Gram matrix, so its left singular vectors suffice.
    """
    stack = _as_stack(bases)
    k, N, d = stack.shape
    if weights is None:
        scaled = stack
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (k,):
            raise ValueError(f"expected {k} weights, got shape {w.shape}")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        scaled = stack * np.sqrt(w)[:, None, None]
    S = np.transpose(scaled, (1, 0, 2)).reshape(N, k * d)
    return dominant_subspace(S, d)


def sum_sq_dist_to_mean(bases, mean) -> float:
    """Sum of squared projection distances from each basis to ``mean``."""
    stack = _as_stack(bases)
    dist = projection_distances(stack, mean)
    return float(np.sum(dist * dist))


def projection_distances_pairwise(A, B):
    """Row-wise projection distances between two ``(k, N, d)`` stacks."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"stack shapes differ: {A.shape} vs {B.shape}")
    return np.sqrt(_check_radicand(_radicand(A, B), A.shape[2]))
