"""Dense-vector primitives shared by every selection and training step.

Everything here is float64, deterministic, and reduction order is fixed
left-to-right (numpy's default contiguous reductions), so repeated runs with
the same inputs are bit-identical.
"""

import math

import numpy as np

from .errors import DegenerateInputError, ParameterError

PROB_SUM_TOL = 1e-6


def as_float_array(x) -> np.ndarray:
    """Widen input to a float64 ndarray without copying when already one."""
    return np.asarray(x, dtype=np.float64)


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale every row to unit L2 norm. Idempotent; rejects zero rows."""
    matrix = as_float_array(matrix)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
        norms = np.linalg.norm(matrix, axis=1)
        if norms[0] == 0.0:
            raise DegenerateInputError("cannot normalize the zero vector")
        return (matrix / norms[:, None])[0]
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        bad = np.nonzero(norms == 0.0)[0][:5].tolist()
        raise DegenerateInputError(f"zero-norm rows at indices {bad}")
    return matrix / norms[:, None]


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    a = as_float_array(a)
    b = as_float_array(b)
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero vector")
    return float(np.dot(a, b) / (na * nb))


def softmax_temperature(scores, tau: float) -> np.ndarray:
    """Normalized exponentials of scores/tau, max-subtracted for stability.

    The argmax of the output equals the argmax of the input for every
    tau > 0.
    """
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    scores = as_float_array(scores)
    if scores.size == 0:
        raise DegenerateInputError("softmax of an empty score vector")
    z = scores / tau
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def softmax_temperature_rows(score_matrix, tau: float) -> np.ndarray:
    """Row-wise temperature softmax of an N x C score matrix."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    scores = as_float_array(score_matrix)
    z = scores / tau
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def entropy(p) -> float:
    """Natural-log entropy of a probability vector; 0*log(0) counts as 0."""
    p = as_float_array(p)
    if p.size == 0:
        raise DegenerateInputError("entropy of an empty vector")
    if np.any(p < -PROB_SUM_TOL) or abs(float(np.sum(p)) - 1.0) > PROB_SUM_TOL:
        raise ParameterError("input is not a probability vector")
    nonzero = p[p > 0.0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def entropy_rows(prob_matrix) -> np.ndarray:
    """Natural-log entropy of every row of an N x C probability matrix."""
    p = as_float_array(prob_matrix)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -np.sum(terms, axis=1)


def renormalized_id_entropy_rows(prob_matrix, id_count: int) -> np.ndarray:
    """Entropy over the first `id_count` columns after renormalizing them.

    When the head carries an extra non-target output, uncertainty is still
    scored over the target classes only.
    """
    p = as_float_array(prob_matrix)[:, :id_count]
    sums = np.sum(p, axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise DegenerateInputError("all-zero ID probability mass in some row")
    return entropy_rows(p / sums)


def percentile_rank_threshold(values, m_percent: float) -> tuple[float, int]:
    """Nearest-rank percentile: the count-th smallest value and that count.

    count = ceil(M/100 * n). Exactly `count` items are designated selected by
    :func:`select_k_smallest`; ties at the threshold are broken by ascending
    input index.
    """
    values = as_float_array(values)
    n = values.size
    if n == 0:
        raise DegenerateInputError("percentile of an empty sequence")
    if not (0.0 < m_percent <= 100.0):
        raise ParameterError(f"M must be in (0, 100], got {m_percent}")
    count = math.ceil(m_percent / 100.0 * n)
    threshold = float(np.partition(values, count - 1)[count - 1])
    return threshold, count


def select_k_smallest(values, k: int) -> np.ndarray:
    """Indices of the k smallest values; ties broken by ascending index.

    Returned sorted ascending so the selection is order-stable.
    """
    values = as_float_array(values)
    if k < 0 or k > values.size:
        raise ParameterError(f"k={k} outside [0, {values.size}]")
    order = np.argsort(values, kind="stable")
    return np.sort(order[:k])
