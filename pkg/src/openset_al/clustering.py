"""Representative selection by clustering: kmeans++ seeding, Lloyd
refinement, and nearest-sample-to-centroid extraction.

Distances are L2 on L2-normalized vectors, which is monotone in cosine
distance, so the clustering geometry stays consistent with the similarity
scores used elsewhere.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class Clustering:
    centroids: np.ndarray  # k x D
    assignment: np.ndarray  # n ints in [0, k)
    inertia: float


def _sq_dists_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """n x k matrix of squared L2 distances."""
    # ||p - c||^2 = ||p||^2 - 2 p.c + ||c||^2
    pp = np.sum(points * points, axis=1)[:, None]
    cc = np.sum(centers * centers, axis=1)[None, :]
    d = pp - 2.0 * (points @ centers.T) + cc
    np.maximum(d, 0.0, out=d)
    return d


def kmeanspp_seed(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Pick k seed centroids: first uniform, rest proportional to squared
    distance to the nearest already-chosen seed.

    Returns (centroids, chosen point indices); indices are distinct.
    """
    n = points.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"k={k} outside [1, {n}]")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(0, n)
    best_sq = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for j in range(1, k):
        weights = np.where(taken, 0.0, best_sq)
        total = float(np.sum(weights))
        if total > 0.0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            # all remaining points coincide with a chosen seed
            idx = int(rng.choice(np.nonzero(~taken)[0]))
        chosen[j] = idx
        taken[idx] = True
        np.minimum(best_sq, np.sum((points - points[idx]) ** 2, axis=1), out=best_sq)
    return points[chosen].copy(), chosen


def lloyd_refine(
    points: np.ndarray,
    centroids: np.ndarray,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> Clustering:
    """Alternate assignment and mean updates until centroids settle.

    Empty clusters are re-seeded to the point currently farthest from its
    assigned centroid. Inertia never increases between iterations.
    """
    if centroids.shape[0] == 0:
        raise ParameterError("need at least one centroid")
    centroids = centroids.copy()
    scale = float(np.max(np.linalg.norm(centroids, axis=1))) or 1.0
    assignment = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iters):
        d = _sq_dists_to(points, centroids)
        assignment = np.argmin(d, axis=1)
        per_point = d[np.arange(points.shape[0]), assignment]
        new_centroids = centroids.copy()
        for j in range(centroids.shape[0]):
            members = assignment == j
            if np.any(members):
                new_centroids[j] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(per_point))
                new_centroids[j] = points[far]
                per_point[far] = 0.0
        movement = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if movement <= tol * scale:
            break
    d = _sq_dists_to(points, centroids)
    assignment = np.argmin(d, axis=1)
    inertia = float(np.sum(d[np.arange(points.shape[0]), assignment]))
    return Clustering(centroids=centroids, assignment=assignment, inertia=inertia)


def nearest_to_centroids(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """For each centroid in order, the nearest not-yet-taken point index.

    Guarantees as many distinct picks as there are centroids (assuming
    enough points), resolving collisions by moving to the next-nearest
    unused point.
    """
    n, k = points.shape[0], centroids.shape[0]
    if k > n:
        raise ParameterError(f"{k} centroids but only {n} points")
    d = _sq_dists_to(points, centroids)
    picks = np.empty(k, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    for j in range(k):
        col = np.where(taken, np.inf, d[:, j])
        picks[j] = int(np.argmin(col))
        taken[picks[j]] = True
    return picks


def cluster_select(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    refine: bool = True,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> np.ndarray:
    """kmeans++ (optionally Lloyd-refined) then nearest-to-centroid picks.

    Returns k distinct indices into ``points``.
    """
    centroids, _ = kmeanspp_seed(points, k, rng)
    if not refine:
        return nearest_to_centroids(points, centroids)
    clustering = lloyd_refine(points, centroids, max_iters=max_iters, tol=tol)
    return nearest_to_centroids(points, clustering.centroids)
