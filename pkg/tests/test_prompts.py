from __future__ import annotations

import json
from collections import Counter

import pytest

from reference import CHI2_CRIT_P001, chi_square_stat
from stic.prompts import PromptKind, PromptRegistry, compose_infused_prompt
from stic.seeding import SeededRng

# Fixture copies of the required wordings, kept separate from the package's
# own constants so a registry regression cannot hide itself.
EXPECTED_GOOD = (
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

EXPECTED_BAD = {
    "Describe the image with imaginative objects that may exist in the scene.",
    "Enrich the description by adding hypothetical objects or characters that could be part of the scene.",
    "Suggest and detail practical items or people that could logically inhabit the image's setting.",
    "Incorporate elements that, though absent, would seamlessly fit into the context of the picture.",
    "Imagine and describe additional everyday objects or activities taking place just out of frame.",
    "Augment the scene with details of potential events or items that are plausible.",
    "Conceive of and detail natural elements, such as weather or animals, that could "
    "realistically enter the scene. Make the description affirmative.",
    "Invent and incorporate details of practical tools, vehicles, or gadgets that could "
    "be expected in a similar scenario.",
}


@pytest.fixture(scope="module")
def registry() -> PromptRegistry:
    return PromptRegistry.defaults()


class TestRegistryContents:
    def test_good_prompt_text_is_byte_identical(self, registry):
        assert registry.good_prompt().text == EXPECTED_GOOD

    def test_good_prompt_prefix_and_clause(self, registry):
        text = registry.good_prompt().text
        assert text.startswith(
            "Please provide a detailed description of the image, focusing on the following."
        )
        assert "Identify the main subjects (people, animals, objects)" in text

    def test_good_prompt_is_stable(self, registry):
        assert registry.good_prompt() is registry.good_prompt()

    def test_exactly_eight_bad_prompts_byte_identical(self, registry):
        assert len(registry.bad) == 8
        assert {t.text for t in registry.bad} == EXPECTED_BAD

    def test_single_good_template(self, registry):
        assert len(registry.good) == 1
        assert registry.good[0].kind is PromptKind.GOOD

    def test_ids_unique(self, registry):
        ids = [t.id for t in registry.good + registry.bad + registry.captioning + registry.describe]
        assert len(ids) == len(set(ids))

    def test_caption_set_contains_photograph_instruction(self, registry):
        assert "Explain what is depicted in the photograph." in {
            t.text for t in registry.captioning
        }

    def test_describe_set_contains_photograph_instruction(self, registry):
        assert "Explain what is depicted in the photograph." in {
            t.text for t in registry.describe
        }


class TestSamplers:
    def test_bad_draws_are_members(self, registry):
        rng = SeededRng(3, "bad")
        for i in range(50):
            assert registry.sample_bad_prompt(rng.at(i)).text in EXPECTED_BAD

    def test_caption_draws_have_caption_kind(self, registry):
        rng = SeededRng(3, "cap")
        for i in range(50):
            assert registry.sample_caption_prompt(rng.at(i)).kind is PromptKind.CAPTIONING

    def test_describe_draws_have_describe_kind(self, registry):
        rng = SeededRng(3, "des")
        assert registry.sample_describe_prompt(rng.at(0)).kind is PromptKind.DESCRIBE

    def test_seeded_determinism(self, registry):
        a = registry.sample_bad_prompt(SeededRng(11, "bad").at(123))
        b = registry.sample_bad_prompt(SeededRng(11, "bad").at(123))
        assert a.id == b.id
        c = registry.sample_describe_prompt(SeededRng(11, "des").at(5))
        d = registry.sample_describe_prompt(SeededRng(11, "des").at(5))
        assert c.id == d.id

    def test_bad_sampler_uniform_over_8000_draws(self, registry):
        rng = SeededRng(2024, "bad")
        counts = Counter(registry.sample_bad_prompt(rng.at(i)).id for i in range(8000))
        assert set(counts.values()) and all(900 <= c <= 1100 for c in counts.values())
        stat = chi_square_stat(list(counts.values()), [1000.0] * 8)
        assert stat < CHI2_CRIT_P001[7]

    def test_caption_sampler_uniform_over_4000_draws(self, registry):
        rng = SeededRng(77, "cap")
        counts = Counter(registry.sample_caption_prompt(rng.at(i)).id for i in range(4000))
        assert all(850 <= c <= 1150 for c in counts.values())
        stat = chi_square_stat(list(counts.values()), [1000.0] * 4)
        assert stat < CHI2_CRIT_P001[3]

    def test_describe_sampler_uniform(self, registry):
        rng = SeededRng(78, "des")
        counts = Counter(registry.sample_describe_prompt(rng.at(i)).id for i in range(8000))
        stat = chi_square_stat(list(counts.values()), [8000 / len(counts)] * len(counts))
        assert stat < CHI2_CRIT_P001[len(counts) - 1]


class TestOverrides:
    def test_override_replaces_one_set(self, tmp_path, registry):
        override = {"captioning": [{"id": "c1", "text": "Caption this."}]}
        path = tmp_path / "prompts.json"
        path.write_text(json.dumps(override))
        loaded = PromptRegistry.load(path)
        assert [t.text for t in loaded.captioning] == ["Caption this."]
        # Absent keys keep defaults.
        assert loaded.good_prompt().text == EXPECTED_GOOD
        assert {t.text for t in loaded.bad} == EXPECTED_BAD

    def test_missing_override_path_gives_defaults(self):
        assert PromptRegistry.load(None).good_prompt().text == EXPECTED_GOOD

    def test_empty_set_rejected(self, tmp_path):
        path = tmp_path / "prompts.json"
        path.write_text(json.dumps({"bad": []}))
        with pytest.raises(ValueError):
            PromptRegistry.load(path)

    def test_two_good_prompts_rejected(self, tmp_path):
        path = tmp_path / "prompts.json"
        path.write_text(
            json.dumps({"good": [{"id": "g1", "text": "a"}, {"id": "g2", "text": "b"}]})
        )
        with pytest.raises(ValueError):
            PromptRegistry.load(path)


def test_compose_infused_prompt_exact_template():
    assert (
        compose_infused_prompt("A red kite.", "What is flying?")
        == "Image description: A red kite.\nWhat is flying?"
    )
