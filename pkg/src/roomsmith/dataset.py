"""Dataset ingestion: rectangular-room filtering, splits, prompt synthesis.

Raw scene records arrive as JSON-style dicts (one per scene) with an id, a
floor given either as ``{"width", "depth"}`` or as a polygon ring, and an
annotation joined from a companion file.  Field spellings vary across scene
dataset exports, so the adapter accepts the common aliases.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .annotations import extract_tags
from .errors import GenerationError, ValidationError
from .gateway import ModelGateway
from .pipeline import PipelineConfig, synthesize_prompt
from .templates import PromptTemplateSet

logger = logging.getLogger(__name__)

_ID_KEYS = ("id", "scene_id", "uid")
_FLOOR_KEYS = ("floor", "floor_polygon", "room_polygon")
_ANNOTATION_KEYS = ("annotation", "caption", "description")

DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class DatasetRecord:
    scene_id: str
    annotation: str
    prompt: str | None = None

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "annotation": self.annotation,
                "prompt": self.prompt}


@dataclass
class DatasetSplit:
    """Disjoint train/val/test record lists plus the skip manifest."""

    train: list[DatasetRecord] = field(default_factory=list)
    val: list[DatasetRecord] = field(default_factory=list)
    test: list[DatasetRecord] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    seed: int = 0

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))

    def records(self) -> list[tuple[str, DatasetRecord]]:
        return ([("train", r) for r in self.train]
                + [("val", r) for r in self.val]
                + [("test", r) for r in self.test])


def _first_key(record: Mapping, keys: Sequence[str]):
    for key in keys:
        if key in record:
            return record[key]
    return None


def is_rectangular(polygon: Sequence[Sequence[float]],
                   tol: float = 1e-6) -> bool:
    """True when the ring is an axis-aligned rectangle within tolerance.

    Four edges, each axis-aligned within ``tol`` and alternating between
    horizontal and vertical; closure of the ring then forces opposite edges
    to match.
    """
    points = [tuple(float(c) for c in p) for p in polygon]
    if len(points) >= 2 and points[0] == points[-1]:
        points = points[:-1]
    if len(points) != 4:
        return False
    kinds = []
    for i in range(4):
        (x0, y0), (x1, y1) = points[i], points[(i + 1) % 4]
        dx, dy = abs(x1 - x0), abs(y1 - y0)
        if dy <= tol and dx > tol:
            kinds.append("h")
        elif dx <= tol and dy > tol:
            kinds.append("v")
        else:
            return False
    return kinds in (["h", "v", "h", "v"], ["v", "h", "v", "h"])


def _floor_is_rectangular(floor, tol: float) -> bool:
    if isinstance(floor, Mapping):
        width = floor.get("width")
        depth = floor.get("depth")
        return (isinstance(width, (int, float)) and width > 0
                and isinstance(depth, (int, float)) and depth > 0)
    if isinstance(floor, Sequence):
        return is_rectangular(floor, tol)
    return False


def prepare_dataset(scenes: Sequence[Mapping],
                    annotations: Mapping[str, str] | None = None, *,
                    fractions: Sequence[float] = DEFAULT_FRACTIONS,
                    seed: int = 0,
                    rect_tol: float = 1e-6,
                    gateway: ModelGateway | None = None,
                    templates: PromptTemplateSet = PromptTemplateSet(),
                    pipeline_config: PipelineConfig = PipelineConfig()
                    ) -> DatasetSplit:
    """Filter to rectangular rooms, optionally synthesize prompts, and split.

    Unusable records are skipped with a reason instead of failing the run.
    Split assignment shuffles scene ids with the given seed, so reruns with
    identical inputs produce identical manifests.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError(f"need three non-negative fractions, got {fractions!r}")
    total_fraction = sum(fractions)
    if not 0.999 <= total_fraction <= 1.001:
        raise ValidationError(f"fractions must sum to 1, got {total_fraction}")

    split = DatasetSplit(seed=seed)
    kept: dict[str, DatasetRecord] = {}
    for position, raw in enumerate(scenes):
        scene_id = _first_key(raw, _ID_KEYS)
        if scene_id is None:
            split.skipped.append((f"<record {position}>", "missing scene id"))
            continue
        scene_id = str(scene_id)
        if scene_id in kept:
            split.skipped.append((scene_id, "duplicate scene id"))
            continue
        floor = _first_key(raw, _FLOOR_KEYS)
        if floor is None:
            split.skipped.append((scene_id, "missing floor"))
            continue
        try:
            rectangular = _floor_is_rectangular(floor, rect_tol)
        except (TypeError, ValueError):
            split.skipped.append((scene_id, "unreadable floor"))
            continue
        if not rectangular:
            split.skipped.append((scene_id, "non-rectangular floor"))
            continue
        annotation = _first_key(raw, _ANNOTATION_KEYS)
        if annotation is None and annotations is not None:
            annotation = annotations.get(scene_id)
        if not annotation or not str(annotation).strip():
            split.skipped.append((scene_id, "missing annotation"))
            continue
        kept[scene_id] = DatasetRecord(scene_id=scene_id,
                                       annotation=str(annotation))

    if gateway is not None:
        for record in kept.values():
            try:
                synthesized = synthesize_prompt(
                    extract_tags(record.annotation), gateway,
                    templates=templates, config=pipeline_config)
            except GenerationError as exc:
                logger.warning("prompt synthesis failed for %s: %s",
                               record.scene_id, exc)
                continue
            record.prompt = synthesized.prompt

    ordered_ids = sorted(kept)
    random.Random(seed).shuffle(ordered_ids)
    n = len(ordered_ids)
    n_train = int(fractions[0] * n)
    n_val = int(fractions[1] * n)
    split.train = [kept[i] for i in ordered_ids[:n_train]]
    split.val = [kept[i] for i in ordered_ids[n_train:n_train + n_val]]
    split.test = [kept[i] for i in ordered_ids[n_train + n_val:]]
    logger.info("dataset split sizes: train=%d val=%d test=%d skipped=%d",
                *split.sizes, len(split.skipped))
    return split
