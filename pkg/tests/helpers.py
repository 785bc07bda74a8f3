"""Test-only reference implementations and synthetic data generators."""
import numpy as np

from scicomm_drift.annotations import AnnotationRecord


def alpha_oracle(units, metric="interval", de="population"):
    """Agreement alpha by raw pairwise enumeration (no coincidence matrix)."""
    units = [list(u) for u in units if len(u) >= 2]
    values = sorted({v for u in units for v in u})
    margins = {v: 0 for v in values}
    for u in units:
        for v in u:
            margins[v] += 1
    n = sum(margins.values())

    if metric == "nominal":
        def d2(c, k):
            return 0.0 if c == k else 1.0
    elif metric == "interval":
        def d2(c, k):
            return float(c - k) ** 2
    else:
        def d2(c, k):
            lo, hi = min(c, k), max(c, k)
            between = sum(margins[v] for v in values if lo <= v <= hi)
            return (between - (margins[c] + margins[k]) / 2.0) ** 2

    num = 0.0
    for u in units:
        m = len(u)
        for i in range(m):
            for j in range(m):
                if i != j:
                    num += d2(u[i], u[j]) / (m - 1)
    d_obs = num / n
    if d_obs == 0.0:
        return 1.0
    exp = sum(margins[c] * margins[k] * d2(c, k) for c in values for k in values)
    d_exp = exp / (n * n) if de == "population" else exp / (n * (n - 1))
    return 1.0 - d_obs / d_exp


def make_rating_synthetic(seed, n_annotators, n_items, raters_per_item,
                          competence_beta=(3.0, 1.0)):
    """Generative crowd data: each rating copies the planted label with the
    annotator's competence, else draws uniformly from 1..5.

    Returns (records, planted_labels, competences)."""
    rng = np.random.default_rng(seed)
    competences = rng.beta(*competence_beta, size=n_annotators)
    planted = rng.integers(1, 6, size=n_items)
    records = []
    for i in range(n_items):
        raters = rng.choice(n_annotators, size=raters_per_item, replace=False)
        for j in raters:
            if rng.random() < competences[j]:
                rating = int(planted[i])
            else:
                rating = int(rng.integers(1, 6))
            records.append(AnnotationRecord(f"item{i:04d}", f"ann{j:03d}", rating))
    return records, planted, competences
