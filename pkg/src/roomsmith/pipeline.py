"""End-to-end orchestration: prompt -> annotation -> layout -> furnishing.

Each stage is a standalone function returning its value plus retry
accounting; :func:`generate_scene` chains them and assembles a fully
populated :class:`GenerationRecord`.  Dataset preparation (prompt synthesis
over existing annotations) reuses the same stage functions.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field

from .annotations import (
    DescriptionList,
    ObjectTag,
    TaggedAnnotation,
    extract_tags,
    parse_description_list,
)
from .errors import DescriptionFormatError, GenerationError, LayoutParseError, ValidationError
from .gateway import ChatRequest, ModelGateway
from .layout_css import (
    CssLayoutDocument,
    LayoutValidationReport,
    parse_layout,
    serialize_layout,
    scene_to_dict,
    validate_layout,
)
from .retrieval import (
    BatchQuery,
    ObjectPrior,
    RankedResult,
    RetrievalConfig,
    retrieve_batch,
)
from .scene import FloorPlan, Inventory, Scene
from .templates import PromptTemplateSet

logger = logging.getLogger(__name__)

_SENTENCE_END_RE = re.compile(r"[.!?]+(?:\s|$)")


@dataclass(frozen=True)
class PipelineConfig:
    """Retry and decoding settings shared by all generation stages.

    The first attempt decodes greedily; retries use ``retry_temperature``.
    A stage makes at most ``1 + max_retries`` attempts.
    """

    max_retries: int = 3
    retry_temperature: float = 0.7
    max_tokens: int = 1024
    seed: int | None = None
    allow_cross_category: bool = False

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        return {
            "max_retries": self.max_retries,
            "retry_temperature": self.retry_temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "allow_cross_category": self.allow_cross_category,
        }


class _StageRunner:
    """Drives the attempt loop for one generation stage."""

    def __init__(self, stage: str, gateway: ModelGateway,
                 config: PipelineConfig):
        self.stage = stage
        self.gateway = gateway
        self.config = config
        self.attempts = 0
        self.raw_outputs: list[str] = []

    def generate(self, instruction: str, user_content: str) -> str:
        temperature = 0.0 if self.attempts == 0 else self.config.retry_temperature
        self.attempts += 1
        completion = self.gateway.generate(ChatRequest(
            instruction=instruction, user_content=user_content,
            max_tokens=self.config.max_tokens, temperature=temperature,
            seed=self.config.seed))
        self.raw_outputs.append(completion)
        return completion

    @property
    def exhausted(self) -> bool:
        return self.attempts > self.config.max_retries

    def fail(self, reason: str) -> GenerationError:
        return GenerationError(reason, stage=self.stage,
                               raw_outputs=self.raw_outputs)


@dataclass
class SynthesizedPrompt:
    prompt: str
    attempts: int
    warnings: list[str] = field(default_factory=list)


def synthesize_prompt(annotation: TaggedAnnotation, gateway: ModelGateway, *,
                      templates: PromptTemplateSet = PromptTemplateSet(),
                      config: PipelineConfig = PipelineConfig()
                      ) -> SynthesizedPrompt:
    """Summarize a tagged annotation into a short user-style prompt."""
    if not annotation.text.strip():
        raise ValidationError("annotation must be non-empty")
    runner = _StageRunner("summarize", gateway, config)
    while not runner.exhausted:
        completion = runner.generate(templates.summarization,
                                     annotation.text).strip()
        if not completion:
            continue
        warnings: list[str] = []
        leaked = extract_tags(completion)
        if leaked.tags:
            warnings.append(
                "synthesized prompt contained object tags; tags elided")
            completion = leaked.scene_level_text.strip()
        return SynthesizedPrompt(prompt=completion, attempts=runner.attempts,
                                 warnings=warnings)
    raise runner.fail("model returned only empty summaries")


@dataclass
class GeneratedAnnotation:
    annotation: TaggedAnnotation
    attempts: int
    warnings: list[str] = field(default_factory=list)


def prompt_to_annotation(user_prompt: str, gateway: ModelGateway, *,
                         templates: PromptTemplateSet = PromptTemplateSet(),
                         config: PipelineConfig = PipelineConfig()
                         ) -> GeneratedAnnotation:
    """Expand a user prompt into a dense annotation with object tags."""
    if not user_prompt.strip():
        raise ValidationError("user prompt must be non-empty")
    runner = _StageRunner("annotation", gateway, config)
    while not runner.exhausted:
        completion = runner.generate(templates.annotation_generation,
                                     user_prompt)
        tagged = extract_tags(completion)
        if tagged.tags:
            return GeneratedAnnotation(annotation=tagged,
                                       attempts=runner.attempts,
                                       warnings=list(tagged.warnings))
    raise runner.fail("no completion contained an object tag")


@dataclass
class GeneratedLayout:
    scene: Scene
    document: CssLayoutDocument
    css_text: str
    attempts: int
    warnings: list[str] = field(default_factory=list)
    validation: LayoutValidationReport = field(
        default_factory=LayoutValidationReport)


def annotation_to_layout(annotation: TaggedAnnotation,
                         room_dims: FloorPlan, gateway: ModelGateway, *,
                         templates: PromptTemplateSet = PromptTemplateSet(),
                         config: PipelineConfig = PipelineConfig()
                         ) -> GeneratedLayout:
    """Generate a layout for the annotation on the given floor plan.

    The requested room dimensions are injected as a room rule ahead of the
    annotation text; the parsed scene is pinned to those dimensions, and any
    disagreement from the model is kept as a warning.  Completions are
    parsed leniently and validation findings are attached, non-fatally.
    """
    if not annotation.tags:
        raise ValidationError("annotation must contain at least one tag")
    room_rule = serialize_layout(Scene(floor=room_dims))
    user_content = f"{room_rule}\n{annotation.text}"
    runner = _StageRunner("layout", gateway, config)
    last_error: LayoutParseError | None = None
    while not runner.exhausted:
        completion = runner.generate(templates.layout_generation, user_content)
        try:
            document, scene = parse_layout(completion, lenient=True)
        except LayoutParseError as exc:
            last_error = exc
            continue
        warnings = list(document.warnings)
        if (abs(scene.floor.width - room_dims.width) > 1e-6
                or abs(scene.floor.depth - room_dims.depth) > 1e-6):
            warnings.append(
                f"model emitted room {scene.floor.width}x{scene.floor.depth} m, "
                f"pinned to requested {room_dims.width}x{room_dims.depth} m")
            scene = Scene(floor=room_dims, objects=scene.objects)
        annotated = {str(tag) for tag in annotation.unique_tags}
        placed = {obj.selector for obj in scene.objects}
        untagged = sorted(placed - annotated)
        if untagged:
            warnings.append(
                f"layout objects missing an annotated tag: {', '.join(untagged)}")
        unplaced = sorted(annotated - placed)
        if unplaced:
            warnings.append(
                f"annotated tags absent from layout: {', '.join(unplaced)}")
        return GeneratedLayout(scene=scene, document=document,
                               css_text=serialize_layout(scene),
                               attempts=runner.attempts, warnings=warnings,
                               validation=validate_layout(scene))
    raise runner.fail(
        f"no completion parsed as a layout (last error: {last_error})")


@dataclass
class GeneratedDescriptions:
    descriptions: DescriptionList
    attempts: int
    warnings: list[str] = field(default_factory=list)


def generate_descriptions(annotation: TaggedAnnotation,
                          gateway: ModelGateway, *,
                          user_prompt: str | None = None,
                          templates: PromptTemplateSet = PromptTemplateSet(),
                          config: PipelineConfig = PipelineConfig()
                          ) -> GeneratedDescriptions:
    """Produce one styled description per tagged object.

    Entries found on earlier attempts are kept; retries only need to fill
    the still-missing tags.  Descriptions longer than three sentences are
    allowed but flagged.
    """
    if not annotation.tags:
        raise ValidationError("annotation must contain at least one tag")
    expected = annotation.unique_tags
    if user_prompt:
        user_content = f"{user_prompt}\n\n{annotation.text}"
    else:
        user_content = annotation.text
    runner = _StageRunner("descriptions", gateway, config)
    found: dict[ObjectTag, str] = {}
    warnings: list[str] = []
    missing = list(expected)
    while missing and not runner.exhausted:
        completion = runner.generate(templates.description, user_content)
        try:
            parsed = parse_description_list(completion, expected)
        except DescriptionFormatError:
            continue
        for tag, description in parsed.descriptions.entries:
            found.setdefault(tag, description)
        for line in parsed.surplus:
            warnings.append(f"surplus description line ignored: {line!r}")
        missing = [tag for tag in expected if tag not in found]
    if missing:
        raise runner.fail(
            "descriptions still missing for tags: "
            + ", ".join(str(tag) for tag in missing))
    for tag, description in found.items():
        sentences = len(_SENTENCE_END_RE.findall(description))
        if sentences > 3:
            warnings.append(
                f"description for {tag} runs {sentences} sentences")
    entries = [(tag, found[tag]) for tag in expected]
    return GeneratedDescriptions(
        descriptions=DescriptionList(entries=entries),
        attempts=runner.attempts, warnings=warnings)


@dataclass
class StageTrace:
    attempts: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"attempts": self.attempts, "warnings": list(self.warnings)}


@dataclass
class FurnishedObject:
    """Retrieval outcome for one placed object."""

    selector: str
    description: str | None
    ranking: RankedResult | None
    chosen_asset: str | None
    note: str | None = None

    @property
    def furnished(self) -> bool:
        return self.chosen_asset is not None

    def to_dict(self) -> dict:
        return {
            "selector": self.selector,
            "description": self.description,
            "ranking": self.ranking.to_dict() if self.ranking else None,
            "chosen_asset": self.chosen_asset,
            "note": self.note,
        }


@dataclass
class GenerationRecord:
    """Everything one text-to-scene run produced."""

    user_prompt: str
    room: FloorPlan
    annotation: TaggedAnnotation
    css_layout: str
    scene: Scene
    descriptions: DescriptionList
    objects: list[FurnishedObject]
    validation: LayoutValidationReport
    stages: dict[str, StageTrace]
    timing_s: dict[str, float] = field(default_factory=dict)

    @property
    def chosen_assets(self) -> dict[str, str]:
        return {obj.selector: obj.chosen_asset for obj in self.objects
                if obj.chosen_asset is not None}

    def to_dict(self, include_timing: bool = False) -> dict:
        data = {
            "user_prompt": self.user_prompt,
            "room": {"width": self.room.width, "depth": self.room.depth},
            "annotation": self.annotation.to_dict(),
            "css_layout": self.css_layout,
            "scene": scene_to_dict(self.scene),
            "descriptions": self.descriptions.to_dict(),
            "objects": [obj.to_dict() for obj in self.objects],
            "validation": self.validation.to_dict(),
            "stages": {name: trace.to_dict()
                       for name, trace in self.stages.items()},
        }
        if include_timing:
            data["timing_s"] = dict(self.timing_s)
        return data


def generate_scene(user_prompt: str, room_dims: FloorPlan,
                   inventory: Inventory, prior: ObjectPrior,
                   cfg: RetrievalConfig, gateway: ModelGateway, *,
                   templates: PromptTemplateSet = PromptTemplateSet(),
                   config: PipelineConfig = PipelineConfig()
                   ) -> GenerationRecord:
    """Run the full pipeline and furnish every placeable object.

    Retrieval candidates are restricted to each object's category unless
    ``config.allow_cross_category`` opens the whole inventory.  Objects that
    cannot be furnished (no description, no matching assets, or scoring
    failure) are marked in the record rather than failing the run.
    """
    timing: dict[str, float] = {}
    stages: dict[str, StageTrace] = {}

    start = time.perf_counter()
    ann = prompt_to_annotation(user_prompt, gateway, templates=templates,
                               config=config)
    timing["annotation"] = time.perf_counter() - start
    stages["annotation"] = StageTrace(ann.attempts, ann.warnings)

    start = time.perf_counter()
    layout = annotation_to_layout(ann.annotation, room_dims, gateway,
                                  templates=templates, config=config)
    timing["layout"] = time.perf_counter() - start
    stages["layout"] = StageTrace(layout.attempts, layout.warnings)

    start = time.perf_counter()
    described = generate_descriptions(ann.annotation, gateway,
                                      user_prompt=user_prompt,
                                      templates=templates, config=config)
    timing["descriptions"] = time.perf_counter() - start
    stages["descriptions"] = StageTrace(described.attempts, described.warnings)

    start = time.perf_counter()
    retrieval_warnings: list[str] = []
    objects: list[FurnishedObject] = []
    queries: list[BatchQuery] = []
    query_slots: list[int] = []
    for obj in layout.scene.objects:
        tag = ObjectTag(category=obj.category, index=obj.index)
        description = described.descriptions.get(tag)
        if description is None:
            retrieval_warnings.append(
                f"{obj.selector}: no description generated, left unfurnished")
            objects.append(FurnishedObject(
                selector=obj.selector, description=None, ranking=None,
                chosen_asset=None, note="no description for tag"))
            continue
        if config.allow_cross_category:
            candidates = list(inventory)
        else:
            candidates = inventory.by_category(obj.category)
        if not candidates:
            retrieval_warnings.append(
                f"{obj.selector}: no inventory assets for category "
                f"'{obj.category}', left unfurnished")
            objects.append(FurnishedObject(
                selector=obj.selector, description=description, ranking=None,
                chosen_asset=None, note="no assets for category"))
            continue
        query_slots.append(len(objects))
        objects.append(FurnishedObject(
            selector=obj.selector, description=description, ranking=None,
            chosen_asset=None))
        queries.append(BatchQuery(description=description,
                                  candidates=tuple(candidates)))

    if queries:
        results = retrieve_batch(queries, prior, cfg, gateway,
                                 embedding_dim=inventory.embedding_dim)
        for slot, result in zip(query_slots, results):
            entry = objects[slot]
            entry.ranking = result
            if result.scores:
                best = result.best
                chosen = inventory.get(best.asset)
                category = entry.selector.rsplit("-", 1)[0]
                if (chosen is not None and not config.allow_cross_category
                        and chosen.category != category):
                    raise ValidationError(
                        f"chosen asset {best.asset!r} has category "
                        f"{chosen.category!r}, object expects {category!r}")
                entry.chosen_asset = best.asset
            else:
                entry.note = "all candidates failed to score"
                retrieval_warnings.append(
                    f"{entry.selector}: all candidates failed to score")
    timing["retrieval"] = time.perf_counter() - start
    stages["retrieval"] = StageTrace(attempts=1, warnings=retrieval_warnings)

    return GenerationRecord(
        user_prompt=user_prompt,
        room=room_dims,
        annotation=ann.annotation,
        css_layout=layout.css_text,
        scene=layout.scene,
        descriptions=described.descriptions,
        objects=objects,
        validation=layout.validation,
        stages=stages,
        timing_s=timing,
    )
