"""Likelihood-based furniture retrieval.

Each candidate mesh is scored as ``lambda_p * log p(asset) + sum of token
log-likelihoods`` of the object description under an image-conditioned
language model.  A cheap embedding-similarity prefilter optionally narrows
the inventory to the top ``m`` candidates before the expensive scoring pass
(coarse-to-fine).  Priors are categorical over the inventory, either uniform
or smoothed counts.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, GatewayError, RetrievalError, ValidationError
from .gateway import EmbedRequest, ModelGateway, ScoreRequest
from .scene import Inventory, MeshAsset
from .templates import SCORING_PROMPT

logger = logging.getLogger(__name__)

PRIOR_KIND_UNIFORM = "uniform"
PRIOR_KIND_DIRICHLET = "dirichlet_smoothed"


@dataclass
class ObjectPrior:
    """Log-probabilities over inventory assets; every asset has mass."""

    log_prior: dict[str, float]
    kind: str
    alpha: float

    def __post_init__(self):
        if self.kind not in (PRIOR_KIND_UNIFORM, PRIOR_KIND_DIRICHLET):
            raise ValidationError(f"unknown prior kind {self.kind!r}")
        if not self.log_prior:
            raise ValidationError("prior must cover at least one asset")
        for asset_id, value in self.log_prior.items():
            if not math.isfinite(value):
                raise ValidationError(
                    f"prior for {asset_id!r} must be finite (positive mass)")
        mass = math.fsum(math.exp(v) for v in self.log_prior.values())
        if abs(mass - 1.0) > 1e-9:
            raise ValidationError(f"prior mass must sum to 1, got {mass!r}")

    def __getitem__(self, asset_id: str) -> float:
        try:
            return self.log_prior[asset_id]
        except KeyError:
            raise ValidationError(
                f"asset {asset_id!r} is not covered by the prior") from None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha,
                "log_prior": dict(sorted(self.log_prior.items()))}

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectPrior":
        return cls(log_prior={str(k): float(v)
                              for k, v in data["log_prior"].items()},
                   kind=data["kind"], alpha=float(data["alpha"]))


def uniform_prior(inventory: Inventory) -> ObjectPrior:
    """Equal mass on every inventory asset."""
    if len(inventory) == 0:
        raise ValidationError("inventory must be non-empty")
    log_p = -math.log(len(inventory))
    return ObjectPrior(log_prior={a.id: log_p for a in inventory},
                       kind=PRIOR_KIND_UNIFORM, alpha=0.0)


def estimate_prior(counts: Mapping[str, int], inventory: Inventory,
                   alpha: float = 1.0) -> ObjectPrior:
    """Smoothed categorical prior from per-asset frequencies.

    ``p(asset) = (count + alpha) / (total + alpha * |inventory|)``; the
    pseudo-count keeps zero-frequency assets at positive mass.  Empty counts
    reduce to the uniform distribution.
    """
    if len(inventory) == 0:
        raise ValidationError("inventory must be non-empty")
    if not (alpha > 0):
        raise ValidationError(f"alpha must be > 0, got {alpha!r}")
    known = set(inventory.ids)
    unknown = sorted(set(counts) - known)
    if unknown:
        raise ValidationError(f"counts reference unknown asset ids: {unknown}")
    for asset_id, count in counts.items():
        if count < 0:
            raise ValidationError(
                f"count for {asset_id!r} must be >= 0, got {count}")
    total = sum(counts.values())
    denominator = total + alpha * len(inventory)
    log_prior = {
        asset.id: math.log((counts.get(asset.id, 0) + alpha) / denominator)
        for asset in inventory
    }
    return ObjectPrior(log_prior=log_prior, kind=PRIOR_KIND_DIRICHLET,
                       alpha=alpha)


def estimate_prior_by_category(category_counts: Mapping[str, int],
                               inventory: Inventory,
                               alpha: float = 1.0) -> ObjectPrior:
    """Category-level counts, mass shared equally by category members.

    For datasets that record how often a *kind* of object occurs rather than
    the specific mesh.
    """
    if len(inventory) == 0:
        raise ValidationError("inventory must be non-empty")
    if not (alpha > 0):
        raise ValidationError(f"alpha must be > 0, got {alpha!r}")
    categories = sorted({a.category for a in inventory})
    unknown = sorted(set(category_counts) - set(categories))
    if unknown:
        raise ValidationError(f"counts reference unknown categories: {unknown}")
    total = sum(category_counts.values())
    denominator = total + alpha * len(categories)
    members: dict[str, int] = {}
    for asset in inventory:
        members[asset.category] = members.get(asset.category, 0) + 1
    log_prior = {}
    for asset in inventory:
        p_category = (category_counts.get(asset.category, 0) + alpha) / denominator
        log_prior[asset.id] = math.log(p_category / members[asset.category])
    return ObjectPrior(log_prior=log_prior, kind=PRIOR_KIND_DIRICHLET,
                       alpha=alpha)


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for scoring and the coarse-to-fine schedule.

    ``coarse_m`` is either ``"all"`` (score the whole candidate set) or the
    number of prefilter survivors to score.  ``lambda_p`` weights the prior
    term against the summed token log-likelihood.
    """

    lambda_p: float = 0.1
    coarse_m: int | str = "all"
    tie_break: str = "asset_id"
    scoring_prompt: str = SCORING_PROMPT
    length_normalize: bool = False
    skip_failures: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.lambda_p < 0:
            raise ConfigurationError(f"lambda_p must be >= 0, got {self.lambda_p}")
        if self.coarse_m != "all":
            if not isinstance(self.coarse_m, int) or self.coarse_m < 1:
                raise ConfigurationError(
                    f"coarse_m must be 'all' or a positive int, got {self.coarse_m!r}")
        if self.tie_break != "asset_id":
            raise ConfigurationError(
                f"unsupported tie_break {self.tie_break!r}")
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")

    def to_dict(self) -> dict:
        return {
            "lambda_p": self.lambda_p,
            "coarse_m": self.coarse_m,
            "tie_break": self.tie_break,
            "scoring_prompt": self.scoring_prompt,
            "length_normalize": self.length_normalize,
            "skip_failures": self.skip_failures,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RetrievalConfig":
        return cls(**data)


@dataclass(frozen=True)
class RetrievalScore:
    """Per-candidate score decomposition."""

    asset: str
    log_prior_term: float
    token_loglik: float
    total: float
    token_detail: tuple[tuple[str, float], ...] = ()

    def recomputed_total(self, lambda_p: float) -> float:
        return lambda_p * self.log_prior_term + self.token_loglik

    def to_dict(self) -> dict:
        return {
            "asset": self.asset,
            "log_prior_term": self.log_prior_term,
            "token_loglik": self.token_loglik,
            "total": self.total,
            "token_detail": [[tok, lp] for tok, lp in self.token_detail],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RetrievalScore":
        return cls(
            asset=data["asset"],
            log_prior_term=float(data["log_prior_term"]),
            token_loglik=float(data["token_loglik"]),
            total=float(data["total"]),
            token_detail=tuple((tok, float(lp))
                               for tok, lp in data.get("token_detail", [])),
        )


@dataclass
class RankedResult:
    """Candidates sorted by total descending, ties by ascending asset id."""

    description: str
    scores: list[RetrievalScore]
    config: RetrievalConfig
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ranking(self) -> list[str]:
        return [score.asset for score in self.scores]

    @property
    def best(self) -> RetrievalScore:
        return self.scores[0]

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "config": self.config.to_dict(),
            "scores": [score.to_dict() for score in self.scores],
            "skipped": [{"asset": a, "reason": r} for a, r in self.skipped],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankedResult":
        return cls(
            description=data["description"],
            scores=[RetrievalScore.from_dict(s) for s in data["scores"]],
            config=RetrievalConfig.from_dict(data["config"]),
            skipped=[(entry["asset"], entry["reason"])
                     for entry in data.get("skipped", [])],
        )


def _sort_scores(scores: list[RetrievalScore]) -> list[RetrievalScore]:
    return sorted(scores, key=lambda s: (-s.total, s.asset))


def rerank_with_lambda(scores: Sequence[RetrievalScore],
                       lambda_p: float) -> list[RetrievalScore]:
    """Recompute totals from the stored decomposition under a new weight."""
    retotaled = [
        RetrievalScore(asset=s.asset, log_prior_term=s.log_prior_term,
                       token_loglik=s.token_loglik,
                       total=lambda_p * s.log_prior_term + s.token_loglik,
                       token_detail=s.token_detail)
        for s in scores
    ]
    return _sort_scores(retotaled)


class FeatureCache:
    """Per-asset feature store with atomic single population per key.

    Concurrent readers block until the single computing thread finishes;
    a failed computation releases the key for the next caller.
    """

    class _Entry:
        __slots__ = ("event", "value", "error")

        def __init__(self):
            self.event = threading.Event()
            self.value = None
            self.error: BaseException | None = None

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, FeatureCache._Entry] = {}

    def get_or_compute(self, key: str, compute: Callable[[], tuple]):
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                entry = FeatureCache._Entry()
                self._entries[key] = entry
                owner = True
            else:
                owner = False
        if owner:
            try:
                entry.value = compute()
            except BaseException as exc:
                entry.error = exc
                with self._lock:
                    self._entries.pop(key, None)
                entry.event.set()
                raise
            entry.event.set()
            return entry.value
        entry.event.wait()
        if entry.error is not None:
            raise entry.error
        return entry.value

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def _asset_embedding(asset: MeshAsset, gateway: ModelGateway,
                     cache: FeatureCache | None) -> tuple[float, ...]:
    if asset.embedding is not None:
        return asset.embedding

    def compute() -> tuple[float, ...]:
        return gateway.embed(EmbedRequest(input=asset.image, kind="image")).vector

    if cache is not None:
        return cache.get_or_compute(asset.id, compute)
    return compute()


def _coarse_over(description: str, candidates: Sequence[MeshAsset], m: int,
                 gateway: ModelGateway, *, embedding_dim: int | None,
                 cache: FeatureCache | None) -> list[MeshAsset]:
    if not description.strip():
        raise ValidationError("description must be non-empty")
    if m < 1:
        raise ValidationError(f"coarse m must be >= 1, got {m}")
    query = gateway.embed(EmbedRequest(input=description, kind="text")).vector
    if embedding_dim is not None and len(query) != embedding_dim:
        raise ConfigurationError(
            f"embedding backend returned dimension {len(query)}, "
            f"inventory declares {embedding_dim}")
    query_vec = np.asarray(query, dtype=np.float64)
    similarities: list[tuple[float, str, MeshAsset]] = []
    for asset in candidates:
        try:
            vector = np.asarray(_asset_embedding(asset, gateway, cache),
                                dtype=np.float64)
        except GatewayError as exc:
            raise ConfigurationError(
                f"asset {asset.id!r} has no embedding and the gateway "
                f"could not embed its image: {exc}") from exc
        if vector.shape != query_vec.shape:
            raise ConfigurationError(
                f"asset {asset.id!r} embedding has dimension {vector.size}, "
                f"query has {query_vec.size}")
        norm = float(np.linalg.norm(vector))
        if norm == 0:
            raise ValidationError(f"asset {asset.id!r} has a zero embedding")
        cosine = float(np.dot(vector, query_vec) / norm)
        similarities.append((cosine, asset.id, asset))
    similarities.sort(key=lambda item: (-item[0], item[1]))
    return [asset for _, _, asset in similarities[:min(m, len(similarities))]]


def coarse_filter(description: str, inventory: Inventory, m: int,
                  gateway: ModelGateway,
                  cache: FeatureCache | None = None) -> list[MeshAsset]:
    """Top-``m`` inventory assets by embedding cosine similarity."""
    if len(inventory) == 0:
        raise ValidationError("inventory must be non-empty")
    return _coarse_over(description, list(inventory), m, gateway,
                        embedding_dim=inventory.embedding_dim, cache=cache)


def score_object(description: str, asset: MeshAsset, prior: ObjectPrior,
                 cfg: RetrievalConfig, gateway: ModelGateway) -> RetrievalScore:
    """Score one candidate: weighted log prior plus token log-likelihood."""
    if not description.strip():
        raise ValidationError("description must be non-empty")
    log_prior = prior[asset.id]
    try:
        response = gateway.score_text(ScoreRequest(
            image=asset.image, prefix_prompt=cfg.scoring_prompt,
            target_text=description))
    except GatewayError as exc:
        raise RetrievalError(f"scoring failed: {exc}",
                             asset_id=asset.id) from exc
    token_loglik = response.sum_logprob
    if cfg.length_normalize:
        token_loglik /= len(response.token_logprobs)
    total = cfg.lambda_p * log_prior + token_loglik
    return RetrievalScore(asset=asset.id, log_prior_term=log_prior,
                          token_loglik=token_loglik, total=total,
                          token_detail=response.token_logprobs)


def rank_inventory(description: str, candidates: Sequence[MeshAsset],
                   prior: ObjectPrior, cfg: RetrievalConfig,
                   gateway: ModelGateway) -> RankedResult:
    """Score every candidate and sort them deterministically."""
    if not candidates:
        raise ValidationError("candidate list must be non-empty")
    skipped: list[tuple[str, str]] = []
    scores: list[RetrievalScore] = []

    def score_one(asset: MeshAsset) -> RetrievalScore | RetrievalError:
        try:
            return score_object(description, asset, prior, cfg, gateway)
        except RetrievalError as exc:
            if not cfg.skip_failures:
                raise
            return exc

    if cfg.jobs > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(score_one, candidates))
    else:
        outcomes = [score_one(asset) for asset in candidates]

    for outcome in outcomes:
        if isinstance(outcome, RetrievalError):
            logger.warning("skipping candidate: %s", outcome)
            skipped.append((outcome.asset_id or "?", str(outcome)))
        else:
            scores.append(outcome)
    if not scores:
        raise RetrievalError("every candidate failed to score")
    return RankedResult(description=description, scores=_sort_scores(scores),
                        config=cfg, skipped=skipped)


def _retrieve_from(description: str, candidates: Sequence[MeshAsset],
                   prior: ObjectPrior, cfg: RetrievalConfig,
                   gateway: ModelGateway, *, embedding_dim: int | None,
                   cache: FeatureCache | None) -> RankedResult:
    if not candidates:
        raise ValidationError("candidate list must be non-empty")
    if cfg.coarse_m == "all":
        pool: Sequence[MeshAsset] = candidates
    else:
        pool = _coarse_over(description, candidates, int(cfg.coarse_m),
                            gateway, embedding_dim=embedding_dim, cache=cache)
    return rank_inventory(description, pool, prior, cfg, gateway)


def retrieve(description: str, inventory: Inventory, prior: ObjectPrior,
             cfg: RetrievalConfig, gateway: ModelGateway) -> RankedResult:
    """Coarse-to-fine retrieval over a full inventory.

    With ``coarse_m == "all"`` this is exactly :func:`rank_inventory`; with a
    numeric ``coarse_m`` only the prefilter survivors are scored.
    """
    if len(inventory) == 0:
        raise ValidationError("inventory must be non-empty")
    return _retrieve_from(description, list(inventory), prior, cfg, gateway,
                          embedding_dim=inventory.embedding_dim, cache=None)


@dataclass(frozen=True)
class BatchQuery:
    """One description with its candidate assets (typically one category)."""

    description: str
    candidates: tuple[MeshAsset, ...]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValidationError("batch query needs at least one candidate")

    @property
    def category_key(self) -> tuple[str, ...]:
        return tuple(sorted({asset.category for asset in self.candidates}))


def retrieve_batch(queries: Sequence[BatchQuery], prior: ObjectPrior,
                   cfg: RetrievalConfig, gateway: ModelGateway,
                   *, embedding_dim: int | None = None) -> list[RankedResult]:
    """Retrieve for many descriptions, computing each asset feature once.

    Queries are processed one candidate-category group at a time; the
    group's asset embeddings are cached for the whole group and released
    when it completes.  Results come back in query order and match
    independent :func:`retrieve` calls exactly.
    """
    batch_cfg = cfg if cfg.skip_failures else replace(cfg, skip_failures=True)
    groups: dict[tuple[str, ...], list[int]] = {}
    for position, query in enumerate(queries):
        groups.setdefault(query.category_key, []).append(position)

    results: list[RankedResult | None] = [None] * len(queries)
    for positions in groups.values():
        cache = FeatureCache()
        for position in positions:
            query = queries[position]
            results[position] = _retrieve_from(
                query.description, query.candidates, prior, batch_cfg,
                gateway, embedding_dim=embedding_dim, cache=cache)
        cache.clear()
    return [result for result in results if result is not None]
