"""Tagged scene annotations and per-object description lists.

An annotation is free text with embedded object tags like ``<wardrobe-0>``.
A description list pairs each tag with one line of text in the form
``wardrobe-0: a tall oak wardrobe``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import DescriptionFormatError
from .scene import CATEGORY_PATTERN

TAG_RE = re.compile(r"<([a-z0-9_]+)-([0-9]+)>")
_PSEUDO_TAG_RE = re.compile(r"<[^<>\s][^<>]*>")


@dataclass(frozen=True, slots=True, order=True)
class ObjectTag:
    """Identity of a tagged object, e.g. category ``bed`` index 0."""

    category: str
    index: int

    def __post_init__(self):
        if not CATEGORY_PATTERN.match(self.category):
            raise ValueError(f"bad tag category {self.category!r}")
        if self.index < 0:
            raise ValueError(f"bad tag index {self.index}")

    def __str__(self) -> str:
        return f"{self.category}-{self.index}"

    @property
    def bracketed(self) -> str:
        return f"<{self.category}-{self.index}>"

    @classmethod
    def parse(cls, text: str) -> "ObjectTag":
        """Parse ``bed-0`` or ``<bed-0>`` into a tag."""
        stripped = text.strip()
        if stripped.startswith("<") and stripped.endswith(">"):
            stripped = stripped[1:-1].strip()
        category, sep, index = stripped.rpartition("-")
        if not sep or not index.isdigit() or not CATEGORY_PATTERN.match(category):
            raise ValueError(f"not an object tag: {text!r}")
        return cls(category=category, index=int(index))


@dataclass
class TaggedAnnotation:
    """An annotation plus the tags found in it.

    ``tags`` lists every occurrence in order with its (start, end) span into
    ``text``; ``scene_level_text`` is the annotation with each tag replaced
    by its category (underscores spaced), leaving no tags behind.
    """

    text: str
    tags: list[tuple[ObjectTag, tuple[int, int]]] = field(default_factory=list)
    scene_level_text: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def unique_tags(self) -> list[ObjectTag]:
        """Distinct tags in first-occurrence order."""
        seen: set[ObjectTag] = set()
        unique: list[ObjectTag] = []
        for tag, _ in self.tags:
            if tag not in seen:
                seen.add(tag)
                unique.append(tag)
        return unique

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tags": [{"category": t.category, "index": t.index,
                      "span": list(span)} for t, span in self.tags],
            "scene_level_text": self.scene_level_text,
            "warnings": list(self.warnings),
        }


def extract_tags(annotation: str) -> TaggedAnnotation:
    """Find every ``<category-index>`` tag in the annotation.

    Malformed bracketed spans (e.g. ``<Bed0>``) are left verbatim and
    reported as warnings.  Text outside recognized tags is preserved.
    """
    tags: list[tuple[ObjectTag, tuple[int, int]]] = []
    plain_parts: list[str] = []
    cursor = 0
    for match in TAG_RE.finditer(annotation):
        tag = ObjectTag(category=match.group(1), index=int(match.group(2)))
        tags.append((tag, match.span()))
        plain_parts.append(annotation[cursor:match.start()])
        plain_parts.append(tag.category.replace("_", " "))
        cursor = match.end()
    plain_parts.append(annotation[cursor:])
    scene_level_text = "".join(plain_parts)

    warnings = []
    recognized = {span for _, span in tags}
    for match in _PSEUDO_TAG_RE.finditer(annotation):
        if match.span() not in recognized:
            warnings.append(f"malformed tag left as text: {match.group(0)!r}")
    return TaggedAnnotation(text=annotation, tags=tags,
                            scene_level_text=scene_level_text,
                            warnings=warnings)


@dataclass
class DescriptionList:
    """Ordered (tag, description) pairs, one per object mention."""

    entries: list[tuple[ObjectTag, str]] = field(default_factory=list)

    def get(self, tag: ObjectTag) -> str | None:
        for entry_tag, description in self.entries:
            if entry_tag == tag:
                return description
        return None

    @property
    def tags(self) -> list[ObjectTag]:
        return [tag for tag, _ in self.entries]

    def to_dict(self) -> dict:
        return {"entries": [{"tag": str(tag), "description": desc}
                            for tag, desc in self.entries]}


@dataclass
class DescriptionParse:
    """Outcome of aligning a description listing against expected tags."""

    descriptions: DescriptionList
    missing: list[ObjectTag] = field(default_factory=list)
    surplus: list[str] = field(default_factory=list)


def parse_description_list(text: str, expected: list[ObjectTag]
                           ) -> DescriptionParse:
    """Parse ``tag: description`` lines and align them to expected tags.

    Tags may appear with or without angle brackets.  Entries come back in
    expected-tag order; expected tags without a line are reported missing,
    lines with unexpected or repeated tags are reported surplus.  Raises
    :class:`DescriptionFormatError` when no line parses at all.
    """
    found: dict[ObjectTag, str] = {}
    surplus: list[str] = []
    parsed_any = False
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        tag_part, sep, description = line.partition(":")
        if not sep:
            surplus.append(raw_line)
            continue
        try:
            tag = ObjectTag.parse(tag_part)
        except ValueError:
            surplus.append(raw_line)
            continue
        parsed_any = True
        if tag not in expected or tag in found:
            surplus.append(raw_line)
            continue
        found[tag] = description.strip()
    if not parsed_any:
        raise DescriptionFormatError(
            "no parseable 'tag: description' lines found")
    entries = [(tag, found[tag]) for tag in expected if tag in found]
    missing = [tag for tag in expected if tag not in found]
    return DescriptionParse(descriptions=DescriptionList(entries=entries),
                            missing=missing, surplus=surplus)


def serialize_description_list(descriptions: DescriptionList) -> str:
    """One ``tag: description`` line per entry; inverse of the parser."""
    return "\n".join(f"{tag}: {description}"
                     for tag, description in descriptions.entries)
