"""Novelty scores. Every scorer follows one direction convention: higher
score means more novel, so all of them feed the same ROC machinery.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .densities import GridDensity
from .errors import DomainError, ValidationError
from .gan import PROB_CLAMP, GanModel, discriminator_features, discriminator_probs, real_class_probs


def score_nd_gan(model: GanModel, x) -> np.ndarray:
    """p_fake / (1 - p_fake): the fake-to-real probability ratio."""
    p_fake = discriminator_probs(model, x)[:, model.K]
    p_fake = np.clip(p_fake, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return p_fake / (1.0 - p_fake)


def score_fake_prob(model: GanModel, x) -> np.ndarray:
    return discriminator_probs(model, x)[:, model.K]


def _check_prob_rows(probs: np.ndarray):
    if np.any(probs < 0):
        raise DomainError("probability-score", f"negative probability (min={probs.min()})")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise DomainError("probability-score", f"row {bad} sums to {sums[bad]!r}, not 1")


def score_entropy(probs) -> np.ndarray:
    """Shannon entropy (natural log) of each probability row."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_prob_rows(probs)
    plogp = np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return -plogp.sum(axis=1)


def score_max_prob(probs) -> np.ndarray:
    """1 - max class probability (flipped so higher = more novel)."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_prob_rows(probs)
    return 1.0 - probs.max(axis=1)


# ---------------------------------------------------------------------------
# normalized kNN distance
# ---------------------------------------------------------------------------


def _knn_distances(queries: np.ndarray, reference: np.ndarray, k: int, exclude_self: bool, block: int = 256):
    """Mean distance to the k nearest neighbors and the index of the k-th one.

    Exact search, blocked to bound memory. With ``exclude_self`` a distance
    of zero to the query's own row in the reference is skipped (used when
    the queries are reference points themselves).
    """
    kth_index = np.empty(len(queries), dtype=np.int64)
    mean_dist = np.empty(len(queries))
    ref_sq = (reference * reference).sum(axis=1)
    take = k + 1 if exclude_self else k
    for start in range(0, len(queries), block):
        q = queries[start : start + block]
        d2 = (q * q).sum(axis=1)[:, None] - 2.0 * (q @ reference.T) + ref_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :take]
        for r, row in enumerate(order):
            if exclude_self:
                row = row[1:]  # nearest hit is the anchor itself (distance 0)
            d = np.sqrt(d2[r, row[:k]])
            mean_dist[start + r] = d.mean()
            kth_index[start + r] = row[k - 1]
    return mean_dist, kth_index


def score_knn(features_query, reference, k: int = 1) -> np.ndarray:
    """Normalized kNN novelty score.

    numerator: (mean, for k>1) distance from the query to its k nearest
    reference points; denominator: the same quantity for NN_k(query), the
    k-th nearest neighbor itself, searched with that anchor excluded.
    """
    queries = np.atleast_2d(np.asarray(features_query, dtype=np.float64))
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if reference.shape[0] < k + 1:
        raise ValidationError(f"reference set has {reference.shape[0]} points, need more than k={k}")
    if queries.shape[1] != reference.shape[1]:
        raise ValidationError(
            f"query width {queries.shape[1]} != reference width {reference.shape[1]}"
        )

    num, kth = _knn_distances(queries, reference, k, exclude_self=False)

    # Denominators depend only on the anchor point; compute each unique anchor once.
    uniq, inverse = np.unique(kth, return_inverse=True)
    den_uniq, _ = _knn_distances(reference[uniq], reference, k, exclude_self=True)
    den = den_uniq[inverse]

    scores = np.zeros(len(queries))
    ok = den > 0
    scores[ok] = num[ok] / den[ok]
    degenerate = (~ok) & (num > 0)  # duplicate anchors with a nonzero numerator
    if np.any(degenerate):
        finite_max = scores[ok].max() if np.any(ok) else 1.0
        scores[degenerate] = finite_max
    return scores


# ---------------------------------------------------------------------------
# degenerate (uniform) baseline generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformBaselineGenerator:
    """Uniform sampler over a box; stands in for a learned generator."""

    bounds: np.ndarray  # (d, 2)

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
        if np.any(b[:, 0] >= b[:, 1]):
            bad = int(np.argmax(b[:, 0] >= b[:, 1]))
            raise ValidationError(f"dimension {bad}: lower bound {b[bad, 0]} >= upper bound {b[bad, 1]}")
        object.__setattr__(self, "bounds", b)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return rng.uniform(lo, hi, size=(n, self.bounds.shape[0]))

    def __call__(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample(n, rng)


def make_uniform_baseline_generator(domain_bounds) -> UniformBaselineGenerator:
    return UniformBaselineGenerator(bounds=np.asarray(domain_bounds, dtype=np.float64))


# ---------------------------------------------------------------------------
# mixture-generator evidence check
# ---------------------------------------------------------------------------


@dataclass
class MixtureCheckReport:
    is_mixture_generator: bool
    cells: list  # (flat cell index, estimated generator density, data density)
    epsilon: float
    n_samples: int
    n_outside: int


def check_mixture_generator(samples_g, grid: GridDensity, epsilon: float) -> MixtureCheckReport:
    """Histogram evidence that a sample set puts mass where the data density
    is at most ``epsilon`` and the generator exceeds it.

    A cell qualifies only when the estimated excess clears 3 binomial
    standard errors of the histogram cell estimate, so thin sampling noise
    does not count as evidence.
    """
    samples = np.atleast_2d(np.asarray(samples_g, dtype=np.float64))
    if samples.shape[0] == 0:
        raise ValidationError("check_mixture_generator needs a non-empty sample set")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")

    n = samples.shape[0]
    vol = grid.cell_volume
    flat = grid.cell_index(samples)
    n_outside = int(np.sum(flat < 0))
    counts = np.bincount(flat[flat >= 0], minlength=int(np.prod(grid.resolution)))

    p_hat = counts / n  # cell-mass estimate
    density_hat = p_hat / vol
    se_density = np.sqrt(np.maximum(p_hat * (1.0 - p_hat), 0.0) / n) / vol

    p_data = grid.values.ravel()
    qualifying = (p_data <= epsilon) & (density_hat > p_data + 3.0 * se_density) & (counts > 0)
    cells = [
        (int(i), float(density_hat[i]), float(p_data[i]))
        for i in np.nonzero(qualifying)[0]
    ]
    return MixtureCheckReport(
        is_mixture_generator=bool(cells),
        cells=cells,
        epsilon=float(epsilon),
        n_samples=n,
        n_outside=n_outside,
    )


# ---------------------------------------------------------------------------
# scorer objects for benchmark runs
# ---------------------------------------------------------------------------


class Scorer:
    """Callable novelty scorer bound to a frozen model; higher = more novel."""

    kind = "base"

    def __init__(self, train_fingerprint: str | None = None):
        self.train_fingerprint = train_fingerprint

    def score(self, x) -> np.ndarray:
        raise NotImplementedError


class NdGanRatioScorer(Scorer):
    kind = "nd-gan-ratio"

    def __init__(self, model: GanModel, train_fingerprint=None):
        super().__init__(train_fingerprint)
        self.model = model

    def score(self, x):
        return score_nd_gan(self.model, x)


class FakeProbScorer(Scorer):
    kind = "fake-prob"

    def __init__(self, model: GanModel, train_fingerprint=None):
        super().__init__(train_fingerprint)
        self.model = model

    def score(self, x):
        return score_fake_prob(self.model, x)


class EntropyScorer(Scorer):
    kind = "entropy"

    def __init__(self, model: GanModel, train_fingerprint=None):
        super().__init__(train_fingerprint)
        self.model = model

    def score(self, x):
        return score_entropy(real_class_probs(self.model, x))


class MaxProbScorer(Scorer):
    kind = "max-prob"

    def __init__(self, model: GanModel, train_fingerprint=None):
        super().__init__(train_fingerprint)
        self.model = model

    def score(self, x):
        return score_max_prob(real_class_probs(self.model, x))


class KnnScorer(Scorer):
    """Normalized kNN distance in the model's feature space."""

    def __init__(self, model: GanModel, reference_x, k: int = 1, train_fingerprint=None):
        super().__init__(train_fingerprint)
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        self.model = model
        self.k = k
        self.kind = f"knn-{k}"
        self.reference = discriminator_features(model, reference_x)

    def score(self, x):
        return score_knn(discriminator_features(self.model, x), self.reference, self.k)


def write_scores_csv(path, scores: np.ndarray, is_novel=None, extra_columns=None):
    """CSV rows: example-id, score, is-novel (0/1/blank), plus extra columns."""
    extra_columns = extra_columns or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["example_id", "score", "is_novel", *extra_columns.keys()])
        for i, s in enumerate(scores):
            flag = "" if is_novel is None else int(bool(is_novel[i]))
            w.writerow([i, repr(float(s)), flag, *(repr(float(col[i])) for col in extra_columns.values())])
