"""Evaluation metrics: text-fidelity ranking, top-k accuracy, FID, KID.

The text-fidelity rate of a scene/prompt pair is the fraction of negative
scenes whose prompt likelihood falls strictly below the positive scene's
median per-view likelihood.  FID and KID compare embedding sets of rendered
scenes; both are computed here from raw matrices, with the model inference
kept behind the gateway.
"""

from __future__ import annotations

import math
import random
import statistics
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .gateway import EmbedRequest, ModelGateway, ScoreRequest

NEGATIVE_BATCH_SIZE = 50
TFR_THRESHOLDS = (0.5, 0.8, 0.9, 0.95, 1.0)


@dataclass(frozen=True)
class TfrSample:
    """Per-view positive log-likelihoods plus one score per negative scene."""

    positive_views: tuple[float, ...]
    negative_scores: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "positive_views",
                           tuple(float(v) for v in self.positive_views))
        object.__setattr__(self, "negative_scores",
                           tuple(float(v) for v in self.negative_scores))
        if not self.positive_views:
            raise ValidationError("sample needs at least one positive view")
        if not self.negative_scores:
            raise ValidationError("sample needs at least one negative score")
        for value in (*self.positive_views, *self.negative_scores):
            if not math.isfinite(value):
                raise ValidationError(f"scores must be finite, got {value!r}")

    def to_dict(self) -> dict:
        return {"positive_views": list(self.positive_views),
                "negative_scores": list(self.negative_scores)}

    @classmethod
    def from_dict(cls, data: dict) -> "TfrSample":
        return cls(positive_views=tuple(data["positive_views"]),
                   negative_scores=tuple(data["negative_scores"]))


def tfr(sample: TfrSample) -> float:
    """Fraction of negatives scored strictly below the median positive view.

    Ties count against the positive pair.
    """
    positive = statistics.median(sample.positive_views)
    below = sum(1 for score in sample.negative_scores if score < positive)
    return below / len(sample.negative_scores)


def tfr_at_k(scores: Sequence[float], k: float) -> float:
    """Fraction of per-sample fidelity scores at or above the threshold."""
    if not scores:
        raise ValidationError("scores must be non-empty")
    if not (0.0 <= k <= 1.0):
        raise ValidationError(f"threshold must lie in [0, 1], got {k!r}")
    return sum(1 for score in scores if score >= k) / len(scores)


def tfr_report(scores: Sequence[float],
               thresholds: Sequence[float] = TFR_THRESHOLDS) -> dict:
    """Threshold table plus the mean fidelity, as one structured report."""
    if not scores:
        raise ValidationError("scores must be non-empty")
    return {
        "n_samples": len(scores),
        "mean_tfr": math.fsum(scores) / len(scores),
        "tfr_at": {f"{k:g}": tfr_at_k(scores, k) for k in thresholds},
    }


@dataclass(frozen=True)
class TopKRecord:
    """One retrieval query: its ground truth and the ranked candidate ids."""

    description_id: str
    ground_truth: str
    ranked: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "ranked", tuple(self.ranked))
        if not self.ranked:
            raise ValidationError(
                f"record {self.description_id!r} has an empty ranking")
        if len(set(self.ranked)) != len(self.ranked):
            raise ValidationError(
                f"record {self.description_id!r} has duplicate ranked ids")

    def to_dict(self) -> dict:
        return {"description_id": self.description_id,
                "ground_truth": self.ground_truth,
                "ranked": list(self.ranked)}

    @classmethod
    def from_dict(cls, data: dict) -> "TopKRecord":
        return cls(description_id=str(data["description_id"]),
                   ground_truth=str(data["ground_truth"]),
                   ranked=tuple(data["ranked"]))


def top_k_accuracy(records: Sequence[TopKRecord],
                   ks: Sequence[int]) -> dict[int, float]:
    """For each k, the fraction of records whose truth is in the first k."""
    if not records:
        raise ValidationError("records must be non-empty")
    for k in ks:
        if k < 1:
            raise ValidationError(f"k values must be >= 1, got {k}")
    accuracies: dict[int, float] = {}
    for k in ks:
        hits = sum(1 for record in records
                   if record.ground_truth in record.ranked[:k])
        accuracies[k] = hits / len(records)
    return accuracies


@dataclass
class EmbeddingSet:
    """An (n, d) matrix of row vectors."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValidationError(
                f"embedding set must be 2-D, got shape {self.vectors.shape}")
        if self.vectors.shape[0] < 1:
            raise ValidationError("embedding set must have at least one row")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embedding set contains non-finite values")
        if self.n <= self.dim:
            warnings.warn(
                f"embedding set has {self.n} rows for dimension {self.dim}; "
                "covariance estimates will be rank-deficient", stacklevel=2)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _check_pair(a: EmbeddingSet, b: EmbeddingSet, min_rows: int) -> None:
    if a.dim != b.dim:
        raise ValidationError(
            f"embedding sets have different dimensions: {a.dim} vs {b.dim}")
    if a.n < min_rows or b.n < min_rows:
        raise ValidationError(
            f"both sets need at least {min_rows} rows, got {a.n} and {b.n}")


def _sqrtm_psd(matrix: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues in (-eps, 0) are clamped to zero; anything more negative is
    a genuine numerical failure.
    """
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if np.any(eigenvalues < -eps):
        raise ValidationError(
            f"matrix is not PSD (min eigenvalue {eigenvalues.min():g})")
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T


def fid(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Fréchet distance between the sets' Gaussian fits.

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` with unbiased
    covariance estimates.
    """
    _check_pair(a, b, min_rows=2)
    mu_a = a.vectors.mean(axis=0)
    mu_b = b.vectors.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a.vectors, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b.vectors, rowvar=False, ddof=1))

    sqrt_a = _sqrtm_psd(cov_a)
    cross_sqrt = _sqrtm_psd(sqrt_a @ cov_b @ sqrt_a)
    value = (float(np.sum((mu_a - mu_b) ** 2))
             + float(np.trace(cov_a) + np.trace(cov_b))
             - 2.0 * float(np.trace(cross_sqrt)))
    if value < -1e-6:
        raise ValidationError(f"FID computed as {value:g}; numerical failure")
    return max(value, 0.0)


def _polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(a: EmbeddingSet, b: EmbeddingSet, *, subset_size: int | None = None,
        n_subsets: int = 100, seed: int = 0) -> float:
    """Unbiased squared MMD with the cubic polynomial kernel.

    Within-set kernel sums exclude the diagonal.  By default the estimate
    uses the full sets; pass ``subset_size`` to average over seeded
    subsamples instead, for parity with subset-averaging tooling.
    """
    _check_pair(a, b, min_rows=2)
    if subset_size is not None:
        if subset_size < 2:
            raise ValidationError("subset_size must be >= 2")
        if subset_size > min(a.n, b.n):
            raise ValidationError(
                f"subset_size {subset_size} exceeds set sizes {a.n}, {b.n}")
        rng = np.random.default_rng(seed)
        estimates = []
        for _ in range(n_subsets):
            rows_a = rng.choice(a.n, size=subset_size, replace=False)
            rows_b = rng.choice(b.n, size=subset_size, replace=False)
            estimates.append(_kid_unbiased(a.vectors[rows_a],
                                           b.vectors[rows_b]))
        return float(np.mean(estimates))
    return _kid_unbiased(a.vectors, b.vectors)


def _kid_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m, n = x.shape[0], y.shape[0]
    k_xx = _polynomial_kernel(x, x)
    k_yy = _polynomial_kernel(y, y)
    k_xy = _polynomial_kernel(x, y)
    term_xx = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    term_yy = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    return float(term_xx + term_yy - 2.0 * k_xy.mean())


def score_scene_text(scene_views: Sequence[str], prompt: str,
                     gateway: ModelGateway, *,
                     scoring_prompt: str = "What is shown in this image?"
                     ) -> list[float]:
    """Per-view summed log-likelihood of the prompt given each rendering."""
    if not scene_views:
        raise ValidationError("at least one view image is required")
    if not prompt.strip():
        raise ValidationError("prompt must be non-empty")
    return [
        gateway.score_text(ScoreRequest(image=view,
                                        prefix_prompt=scoring_prompt,
                                        target_text=prompt)).sum_logprob
        for view in scene_views
    ]


def clip_score(prompt: str, view_images: Sequence[str],
               gateway: ModelGateway) -> float:
    """Cosine between the prompt embedding and the mean view embedding."""
    if not view_images:
        raise ValidationError("at least one view image is required")
    if not prompt.strip():
        raise ValidationError("prompt must be non-empty")
    prompt_vec = np.asarray(
        gateway.embed(EmbedRequest(input=prompt, kind="text")).vector)
    view_vecs = np.stack([
        np.asarray(gateway.embed(EmbedRequest(input=view, kind="image")).vector)
        for view in view_images
    ])
    mean_vec = view_vecs.mean(axis=0)
    norm = float(np.linalg.norm(mean_vec))
    if norm == 0:
        raise ValidationError("view embeddings cancel out; cannot score")
    return float(prompt_vec @ mean_vec / norm)


def sample_negatives(pool: Sequence, size: int = NEGATIVE_BATCH_SIZE,
                     seed: int = 0) -> list:
    """Seeded negative batch; takes the whole pool when it is smaller."""
    if not pool:
        raise ValidationError("negative pool must be non-empty")
    rng = random.Random(seed)
    if len(pool) <= size:
        items = list(pool)
        rng.shuffle(items)
        return items
    return rng.sample(list(pool), size)


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Aligned plain-text table."""
    cells = [[str(value) for value in row] for row in rows]
    widths = [len(header) for header in headers]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def topk_table(results: Mapping[str, Mapping[int, float]],
               ks: Sequence[int]) -> str:
    """One row per labeled run, one accuracy column per k."""
    headers = ["run"] + [f"top-{k}" for k in ks]
    rows = [
        [label] + [f"{accuracies.get(k, float('nan')):.3f}" for k in ks]
        for label, accuracies in results.items()
    ]
    return format_table(headers, rows)
