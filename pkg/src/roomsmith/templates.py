"""Instruction templates for the language-model stages.

The defaults below are version-pinned; runs embed their hashes so output
artifacts record exactly which wording produced them.  A config file may
override any of them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

TEMPLATES_VERSION = "1"

SUMMARIZATION_PROMPT = (
    "Summarize the following grounded annotation into a shorter description "
    "that a user would use to describe what type of room they would like for "
    "their home:"
)

DESCRIPTION_PROMPT = (
    "I'm going to give you a detailed scene annotation with object tags. For "
    "each tagged object give me a detailed object description so that all "
    "the objects match the overall theme of the room and any description "
    "details in the annotation. Put each object description on its own line "
    "(if there are several objects which are the same just repeat the same "
    "description) in the format [object tag]: [description]. Don't spend "
    "more than three sentences on a single object. Do not include the "
    "explicit object tag (e.g <wardrobe-0>) in your description just use "
    "natural language. Output the objects in the same order that they are "
    "listed in the scene annotation. Detailed annotation:"
)

LAYOUT_PROMPT = (
    "Make a room layout in CSS format that matches the following annotation:"
)

ANNOTATION_PROMPT = (
    "Generate a detailed room annotation with object tags from the following "
    "short user prompt:"
)

SCORING_PROMPT = "What is shown in this image?"


@dataclass(frozen=True)
class PromptTemplateSet:
    """The five instruction strings used across the pipeline."""

    summarization: str = SUMMARIZATION_PROMPT
    description: str = DESCRIPTION_PROMPT
    layout_generation: str = LAYOUT_PROMPT
    annotation_generation: str = ANNOTATION_PROMPT
    scoring: str = SCORING_PROMPT

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplateSet":
        """Load overrides from a JSON mapping of template name to text."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown template names: {sorted(unknown)}")
        return cls(**data)

    def hashes(self) -> dict[str, str]:
        """sha256 of each template, for provenance stamps."""
        return {
            f.name: hashlib.sha256(
                getattr(self, f.name).encode("utf-8")).hexdigest()
            for f in fields(self)
        }
