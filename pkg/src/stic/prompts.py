"""Prompt registry and seeded samplers.

Holds the fixed prompt texts the data factory uses: the single step-by-step
description prompt that elicits preferred responses, the eight
hallucination-inducing prompts that elicit dispreferred ones, and the
generic captioning/description instruction sets. Texts are immutable at
runtime; an optional JSON override file can replace whole sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .seeding import SeededRng

INFUSION_PREFIX = "Image description: "


def compose_infused_prompt(description: str, instruction: str) -> str:
    """Prepend a generated image description to an instruction, verbatim."""
    return f"{INFUSION_PREFIX}{description}\n{instruction}"


class PromptKind(str, Enum):
    GOOD = "good"
    BAD_HALLUCINATION = "bad"
    CAPTIONING = "captioning"
    DESCRIBE = "describe"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    kind: PromptKind
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("prompt id must be non-empty")
        if not self.text:
            raise ValueError(f"prompt {self.id!r} has empty text")


GOOD_PROMPT_TEXT = (
    "Please provide a detailed description of the image, focusing on the following. "
    "Identify the main subjects (people, animals, objects) in the image and describe "
    "what they are doing. Describe the setting of the image. Is it indoors or outdoors? "
    "What kind of environment or location does it depict? What mood does the image "
    "convey? Are there any specific elements (such as lighting, weather, expressions) "
    "that contribute to this atmosphere? Describe the dominant colors and the overall "
    "composition. How do these elements affect the image's impact? Point out any "
    "details or symbols that might be relevant to understanding the image's meaning "
    "or context. If applicable, provide interpretations of what the image might "
    "represent or communicate."
)

BAD_PROMPT_TEXTS = (
    ("bad.imaginative", "Describe the image with imaginative objects that may exist in the scene."),
    (
        "bad.hypothetical",
        "Enrich the description by adding hypothetical objects or characters that could be part of the scene.",
    ),
    (
        "bad.practical-items",
        "Suggest and detail practical items or people that could logically inhabit the image's setting.",
    ),
    (
        "bad.absent-elements",
        "Incorporate elements that, though absent, would seamlessly fit into the context of the picture.",
    ),
    (
        "bad.out-of-frame",
        "Imagine and describe additional everyday objects or activities taking place just out of frame.",
    ),
    (
        "bad.plausible-events",
        "Augment the scene with details of potential events or items that are plausible.",
    ),
    (
        "bad.natural-elements",
        "Conceive of and detail natural elements, such as weather or animals, that could "
        "realistically enter the scene. Make the description affirmative.",
    ),
    (
        "bad.tools-vehicles",
        "Invent and incorporate details of practical tools, vehicles, or gadgets that could "
        "be expected in a similar scenario.",
    ),
)

# The source material never pins the generic captioning set, so these are
# overridable defaults in the same simple-instruction register.
CAPTION_TEXTS = (
    ("detail", "Describe the image in detail."),
    ("photograph", "Explain what is depicted in the photograph."),
    ("shown", "What is shown in this image?"),
    ("given", "Provide a description of the given image."),
)


def _default_good() -> tuple[PromptTemplate, ...]:
    return (PromptTemplate("good.steps", PromptKind.GOOD, GOOD_PROMPT_TEXT),)


def _default_bad() -> tuple[PromptTemplate, ...]:
    return tuple(PromptTemplate(pid, PromptKind.BAD_HALLUCINATION, text) for pid, text in BAD_PROMPT_TEXTS)


def _default_captioning() -> tuple[PromptTemplate, ...]:
    return tuple(PromptTemplate(f"caption.{pid}", PromptKind.CAPTIONING, text) for pid, text in CAPTION_TEXTS)


def _default_describe() -> tuple[PromptTemplate, ...]:
    return tuple(PromptTemplate(f"describe.{pid}", PromptKind.DESCRIBE, text) for pid, text in CAPTION_TEXTS)


class PromptRegistry:
    """Immutable collection of the four prompt sets plus uniform samplers."""

    def __init__(
        self,
        good: Sequence[PromptTemplate],
        bad: Sequence[PromptTemplate],
        captioning: Sequence[PromptTemplate],
        describe: Sequence[PromptTemplate],
    ):
        self.good = tuple(good)
        self.bad = tuple(bad)
        self.captioning = tuple(captioning)
        self.describe = tuple(describe)
        if len(self.good) != 1:
            raise ValueError(f"registry requires exactly one good prompt, got {len(self.good)}")
        for name, templates, kind in (
            ("bad", self.bad, PromptKind.BAD_HALLUCINATION),
            ("captioning", self.captioning, PromptKind.CAPTIONING),
            ("describe", self.describe, PromptKind.DESCRIBE),
        ):
            if not templates:
                raise ValueError(f"registry prompt set {name!r} is empty")
            for t in templates:
                if t.kind is not kind:
                    raise ValueError(f"prompt {t.id!r} has kind {t.kind}, expected {kind}")
        if self.good[0].kind is not PromptKind.GOOD:
            raise ValueError("good prompt has the wrong kind")
        ids = [t.id for t in self.good + self.bad + self.captioning + self.describe]
        if len(ids) != len(set(ids)):
            raise ValueError("prompt ids must be unique within the registry")

    @classmethod
    def defaults(cls) -> "PromptRegistry":
        return cls(_default_good(), _default_bad(), _default_captioning(), _default_describe())

    @classmethod
    def load(cls, override_path: Optional[str | Path] = None) -> "PromptRegistry":
        """Registry from defaults, with sets replaced by a JSON override file.

        The file maps any of "good", "bad", "captioning", "describe" to a
        list of {"id", "text"} objects; absent keys keep the defaults.
        """
        if override_path is None:
            return cls.defaults()
        with open(override_path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("prompt override file must contain a JSON object")
        sets = {
            "good": (_default_good(), PromptKind.GOOD),
            "bad": (_default_bad(), PromptKind.BAD_HALLUCINATION),
            "captioning": (_default_captioning(), PromptKind.CAPTIONING),
            "describe": (_default_describe(), PromptKind.DESCRIBE),
        }
        resolved = {}
        for key, (default, kind) in sets.items():
            if key not in data:
                resolved[key] = default
                continue
            entries = data[key]
            if not isinstance(entries, list):
                raise ValueError(f"override key {key!r} must map to a list")
            resolved[key] = tuple(
                PromptTemplate(entry["id"], kind, entry["text"]) for entry in entries
            )
        return cls(resolved["good"], resolved["bad"], resolved["captioning"], resolved["describe"])

    def good_prompt(self) -> PromptTemplate:
        """The single step-by-step description prompt."""
        return self.good[0]

    def sample_bad_prompt(self, rng: SeededRng) -> PromptTemplate:
        """Uniform draw from the hallucination-inducing set."""
        return self.bad[rng.next_pick(len(self.bad))]

    def sample_caption_prompt(self, rng: SeededRng) -> PromptTemplate:
        """Uniform draw from the captioning set (the stored training prompt)."""
        return self.captioning[rng.next_pick(len(self.captioning))]

    def sample_describe_prompt(self, rng: SeededRng) -> PromptTemplate:
        """Uniform draw from the description-instruction set."""
        return self.describe[rng.next_pick(len(self.describe))]
