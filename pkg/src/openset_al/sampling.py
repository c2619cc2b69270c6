"""Query selection for rounds after warm-up: prototype-based ID candidate
filtering followed by entropy-guided stochastic sampling.

Candidate filtering keeps the exact nearest-rank share of the unlabeled pool
by distance to the nearest ID class prototype. The final query shuffles the
candidates into contiguous batches and takes the most uncertain samples of
each batch, trading pure uncertainty for batch diversity.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, MissingClassError, ParameterError
from .numerics import l2_normalize_rows, percentile_rank_threshold, select_k_smallest


@dataclass(frozen=True)
class PrototypeSet:
    """Per-ID-class mean feature vectors, optionally with a non-target centroid."""

    prototypes: np.ndarray  # C x F
    ood_centroid: np.ndarray | None = None

    @property
    def id_count(self) -> int:
        return int(self.prototypes.shape[0])


def compute_prototypes(
    features: np.ndarray,
    class_indices: np.ndarray,
    num_classes: int,
    ood_features: np.ndarray | None = None,
) -> PrototypeSet:
    """Average the features of each ID class's labeled samples.

    ``ood_features`` (the non-target-labeled samples), when given and
    non-empty, contribute an extra centroid used to veto candidates.
    Raises MissingClassError listing every class with no labeled sample.
    """
    features = np.asarray(features, dtype=np.float64)
    class_indices = np.asarray(class_indices, dtype=np.int64)
    missing = [c for c in range(num_classes) if not np.any(class_indices == c)]
    if missing:
        raise MissingClassError(missing)
    prototypes = np.vstack(
        [features[class_indices == c].mean(axis=0) for c in range(num_classes)]
    )
    centroid = None
    if ood_features is not None and len(ood_features) > 0:
        centroid = np.asarray(ood_features, dtype=np.float64).mean(axis=0)
    return PrototypeSet(prototypes=prototypes, ood_centroid=centroid)


def ood_distance(z: np.ndarray, protos: PrototypeSet) -> float:
    """Distance of one sample to its nearest ID prototype: min_c (1 - cos)."""
    return float(ood_distances(np.asarray(z, dtype=np.float64)[None, :], protos)[0])


def ood_distances(Z: np.ndarray, protos: PrototypeSet) -> np.ndarray:
    """Vectorized min-over-prototypes cosine distance for every row of Z.

    With a non-target centroid present, any sample nearer to that centroid
    than to every ID prototype is pushed to +inf so it cannot be selected.
    """
    Z = np.asarray(Z, dtype=np.float64)
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm feature row")
    Zn = Z / norms[:, None]
    Pn = l2_normalize_rows(protos.prototypes)
    d = 1.0 - np.max(Zn @ Pn.T, axis=1)
    if protos.ood_centroid is not None:
        centroid = protos.ood_centroid
        cn = np.linalg.norm(centroid)
        if cn == 0.0:
            raise DegenerateInputError("zero-norm non-target centroid")
        d_ood = 1.0 - Zn @ (centroid / cn)
        d = np.where(d_ood < d, np.inf, d)
    return d


def pis_select(distances: np.ndarray, m_percent: float) -> np.ndarray:
    """Indices of the ceil(M/100 * n) nearest-to-prototype samples."""
    distances = np.asarray(distances, dtype=np.float64)
    _, count = percentile_rank_threshold(distances, m_percent)
    return select_k_smallest(distances, count)


def egss_partition(
    candidate_ids: np.ndarray, num_batches: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffle candidates and split into contiguous near-equal batches.

    The remainder is spread over the first batches, so batch sizes differ by
    at most one.
    """
    if num_batches < 1:
        raise ParameterError("need at least one batch")
    candidate_ids = np.asarray(candidate_ids)
    shuffled = candidate_ids[rng.permutation(candidate_ids.shape[0])]
    n = shuffled.shape[0]
    base, extra = divmod(n, num_batches)
    batches = []
    start = 0
    for b in range(num_batches):
        size = base + (1 if b < extra else 0)
        batches.append(shuffled[start : start + size])
        start += size
    return batches


def _per_batch_quota(budget: int, num_batches: int) -> list[int]:
    base, extra = divmod(budget, num_batches)
    return [base + (1 if b < extra else 0) for b in range(num_batches)]


def egss_select(
    candidate_ids: np.ndarray,
    entropies: dict | np.ndarray,
    num_batches: int,
    budget: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Entropy-guided stochastic sampling over a candidate set.

    ``entropies`` maps candidate id -> uncertainty (a dict, or an array
    indexed by candidate id). Picks min(budget, len(candidates)) distinct
    ids: the top-I most uncertain of each shuffled batch, ties broken by the
    smaller id.
    """
    if budget < 1:
        raise ParameterError("budget must be >= 1")
    candidate_ids = np.asarray(candidate_ids)
    if candidate_ids.size == 0:
        return candidate_ids
    batches = egss_partition(candidate_ids, num_batches, rng)
    quotas = _per_batch_quota(budget, num_batches)
    picked = []
    for batch, quota in zip(batches, quotas):
        if batch.size == 0 or quota == 0:
            continue
        take = min(quota, batch.size)
        # sort by (descending entropy, ascending id)
        order = sorted(batch.tolist(), key=lambda sid: (-entropies[sid], sid))
        picked.extend(order[:take])
    return np.asarray(picked, dtype=candidate_ids.dtype)
