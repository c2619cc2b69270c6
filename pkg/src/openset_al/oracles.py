"""Straight-line reference implementations used only by the test suite.

Each function re-derives a selection or probability rule with plain loops and
no shared code with the optimized modules, so that tests can check the two
routes against each other.
"""

import math


def oracle_softmax(scores, tau):
    """Temperature softmax computed term by term with plain math.exp."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    shifted = [s / tau for s in scores]
    m = max(shifted)
    exps = [math.exp(s - m) for s in shifted]
    total = sum(exps)
    return [e / total for e in exps]


def oracle_percentile(values, m_percent):
    """Indices of the ceil(M/100*n) smallest values, ties by input order."""
    n = len(values)
    if n == 0:
        raise ValueError("empty input")
    count = math.ceil(m_percent / 100.0 * n)
    order = sorted(range(n), key=lambda i: (values[i], i))
    return sorted(order[:count])


def oracle_topk_entropy(candidates, entropies, k):
    """Top-k candidates by entropy via repeated max-extraction.

    Ties broken by the smaller candidate identifier. Returns chosen
    candidates in selection order.
    """
    remaining = list(range(len(candidates)))
    chosen = []
    for _ in range(min(k, len(remaining))):
        best = remaining[0]
        for i in remaining[1:]:
            if entropies[i] > entropies[best] or (
                entropies[i] == entropies[best] and candidates[i] < candidates[best]
            ):
                best = i
        chosen.append(candidates[best])
        remaining.remove(best)
    return chosen


def oracle_entropy(probs):
    """Natural-log entropy with the 0*log(0)=0 convention, plain loop."""
    total = 0.0
    for p in probs:
        if p > 0:
            total -= p * math.log(p)
    return total


def oracle_ksmallest(values, k):
    """Indices of the k smallest values, ties by input order."""
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    return sorted(order[:k])
