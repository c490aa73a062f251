from __future__ import annotations

import json
import threading
from pathlib import Path

import pytest
from PIL import Image

from conftest import make_image_corpus, make_sft_file
from stic.corruption import CorruptionSpec, apply_corruption
from stic.genclient import (
    GenerationRequest,
    MockBackend,
    TransportFailure,
    mock_generate,
)
from stic.imagefiles import load_image
from stic.pipeline import (
    IngestError,
    ManifestMismatch,
    RunManifest,
    SkipRateExceeded,
    build_infused_dataset,
    build_preference_dataset,
    ingest_images,
    load_resume_manifest,
    load_sft_records,
    manifest_path,
    select_infusion_subset,
    validate_dataset,
)
from stic.prompts import PromptRegistry
from stic.seeding import SeededRng

RUN_KWARGS = dict(config_digest="digest-a", config_snapshot={"k": 1}, backend="mock")


def build_pref(images, out, client, seed=11, **overrides):
    registry = PromptRegistry.defaults()
    kwargs = {**RUN_KWARGS, "max_workers": 4, **overrides}
    return build_preference_dataset(images, out, client, registry, seed, **kwargs)


class TestIngest:
    def test_lexicographic_order_and_limit(self, image_corpus):
        records, skips = ingest_images(image_corpus, limit=6)
        assert [r.image_id for r in records] == [f"img_{i:04d}.png" for i in range(6)]
        assert skips == []

    def test_dimensions_and_digest_recorded(self, image_corpus):
        records, _ = ingest_images(image_corpus, limit=1)
        assert (records[0].width, records[0].height) == (16, 12)
        assert len(records[0].digest) == 64

    def test_reingest_is_identical(self, image_corpus):
        a, _ = ingest_images(image_corpus)
        b, _ = ingest_images(image_corpus)
        assert a == b

    def test_corrupt_file_is_skipped(self, tmp_path):
        root = make_image_corpus(tmp_path / "imgs", count=4)
        (root / "img_0001.png").write_bytes(b"not a png at all")
        records, skips = ingest_images(root)
        assert len(records) == 3
        assert [s["path"] for s in skips] == ["img_0001.png"]

    def test_empty_directory_is_fatal(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(IngestError):
            ingest_images(tmp_path / "empty")

    def test_missing_directory_is_fatal(self, tmp_path):
        with pytest.raises(IngestError):
            ingest_images(tmp_path / "nope")


class TestPreferenceBuild:
    def test_counts_and_validity(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        _, manifest = build_pref(records, out, MockBackend(seed=11))
        lines = out.read_text().splitlines()
        assert len(lines) == len(records)
        counts = manifest.summary()
        assert counts["done"] + counts["skipped"] == len(records)
        assert validate_dataset(out, "preference").ok

    def test_branch_matches_recomputed_coin(self, image_corpus, tmp_path):
        seed = 23
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        build_pref(records, out, MockBackend(seed=seed), seed=seed)
        branch = SeededRng(seed, "pref.branch")
        for i, line in enumerate(out.read_text().splitlines()):
            obj = json.loads(line)
            coin = branch.at(i).next_unit()
            expected = "bad_prompt" if coin < 0.5 else "corruption"
            assert obj["provenance"]["type"] == expected

    def test_preferred_always_from_clean_image_and_good_prompt(self, image_corpus, tmp_path):
        seed = 31
        registry = PromptRegistry.defaults()
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        build_pref(records, out, MockBackend(seed=seed), seed=seed)
        pref_seeds = SeededRng(seed, "pref.gen_preferred")
        dis_seeds = SeededRng(seed, "pref.gen_dispreferred")
        for i, line in enumerate(out.read_text().splitlines()):
            obj = json.loads(line)
            clean = load_image(image_corpus / obj["image"])
            expected_chosen = mock_generate(
                seed,
                GenerationRequest(
                    prompt=registry.good_prompt().text,
                    image=clean,
                    seed=pref_seeds.at(i).next_uint() >> 1,
                ),
            ).text
            assert obj["chosen"] == expected_chosen
            if obj["provenance"]["type"] == "corruption":
                spec = CorruptionSpec.from_dict(obj["provenance"])
                corrupted = apply_corruption(clean, spec)
                expected_rejected = mock_generate(
                    seed,
                    GenerationRequest(
                        prompt=obj["prompt"],
                        image=corrupted,
                        seed=dis_seeds.at(i).next_uint() >> 1,
                    ),
                ).text
                assert obj["rejected"] == expected_rejected

    def test_rerun_is_byte_identical(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        build_pref(records, out_a, MockBackend(seed=5), seed=5)
        build_pref(records, out_b, MockBackend(seed=5), seed=5)
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_worker_count_does_not_change_bytes(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        build_pref(records, out_a, MockBackend(seed=5), seed=5, max_workers=1)
        build_pref(records, out_b, MockBackend(seed=5), seed=5, max_workers=8)
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_output_order_equals_input_order(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        build_pref(records, out, MockBackend(seed=2), seed=2, max_workers=8)
        emitted = [json.loads(l)["image"] for l in out.read_text().splitlines()]
        assert emitted == [r.image_id for r in records]

    def test_empty_image_list_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            build_pref([], tmp_path / "x.jsonl", MockBackend(seed=0))

    def test_skip_rate_failure(self, tmp_path):
        import numpy as np

        root = make_image_corpus(tmp_path / "wide", count=16, size=(16, 12))
        # Four extra odd-width images; the flaky client refuses exactly those.
        for i in range(4):
            arr = np.full((12, 15, 3), i * 11 % 256, dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(root / f"odd_{i}.png")
        records, _ = ingest_images(root)
        assert len(records) == 20

        class FlakyOnOddWidth:
            def __init__(self):
                self.inner = MockBackend(seed=1)

            def generate(self, req):
                if req.image is not None and req.image.width == 15:
                    raise TransportFailure("synthetic outage")
                return self.inner.generate(req)

        out = tmp_path / "pref.jsonl"
        with pytest.raises(SkipRateExceeded):
            build_pref(records, out, FlakyOnOddWidth(), seed=3)
        manifest = RunManifest.load(manifest_path(out))
        skipped = [v for v in manifest.items.values() if v["status"] == "skipped"]
        assert len(skipped) == 4
        assert all(s["error_class"] == "TransportFailure" for s in skipped)

    def test_degenerate_pair_is_skipped(self, image_corpus, tmp_path):
        class ConstantClient:
            def generate(self, req):
                return mock_generate(0, GenerationRequest(prompt="fixed"))

        records, _ = ingest_images(image_corpus, limit=2)
        out = tmp_path / "pref.jsonl"
        with pytest.raises(SkipRateExceeded):
            build_pref(records, out, ConstantClient(), seed=3)
        manifest = RunManifest.load(manifest_path(out))
        classes = {v["error_class"] for v in manifest.items.values()}
        assert classes == {"DegeneratePair"}


class AbortAfter:
    """Client wrapper that simulates a crash after n successful calls."""

    def __init__(self, inner, n: int):
        self.inner = inner
        self.n = n
        self.count = 0
        self.lock = threading.Lock()

    def generate(self, req):
        with self.lock:
            self.count += 1
            if self.count > self.n:
                raise RuntimeError("simulated crash")
        return self.inner.generate(req)


class TestResume:
    def test_interrupted_run_resumes_byte_identical(self, tmp_path):
        root = make_image_corpus(tmp_path / "imgs", count=24, seed=3)
        records, _ = ingest_images(root)
        seed = 17

        straight = tmp_path / "straight.jsonl"
        build_pref(records, straight, MockBackend(seed=seed), seed=seed)

        out = tmp_path / "resumed.jsonl"
        with pytest.raises(RuntimeError):
            build_pref(records, out, AbortAfter(MockBackend(seed=seed), 12), seed=seed,
                       max_workers=2)
        manifest = RunManifest.load(manifest_path(out))
        assert 0 < len(manifest.pending_ids()) < len(records)

        resume_manifest = load_resume_manifest(out, "digest-a", RUN_KWARGS["config_snapshot"])
        build_pref(records, out, MockBackend(seed=seed), seed=seed,
                   resume_manifest=resume_manifest)
        assert out.read_bytes() == straight.read_bytes()

    def test_resume_with_nothing_pending_makes_no_calls(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        build_pref(records, out, MockBackend(seed=9), seed=9)
        first_bytes = out.read_bytes()
        out.unlink()

        counting = MockBackend(seed=9)
        resume_manifest = load_resume_manifest(out, "digest-a", RUN_KWARGS["config_snapshot"])
        build_pref(records, out, counting, seed=9, resume_manifest=resume_manifest)
        assert counting.calls == 0
        assert out.read_bytes() == first_bytes

    def test_digest_mismatch_is_fatal_with_diff(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        build_pref(records, out, MockBackend(seed=9), seed=9,
                   config_snapshot={"corruption": {"lowres_factor": 0.125}})
        with pytest.raises(ManifestMismatch) as err:
            load_resume_manifest(out, "digest-b", {"corruption": {"lowres_factor": 0.25}})
        assert "lowres_factor" in str(err.value)

    def test_order_change_is_fatal(self, image_corpus, tmp_path):
        records, _ = ingest_images(image_corpus)
        out = tmp_path / "pref.jsonl"
        build_pref(records, out, MockBackend(seed=9), seed=9)
        resume_manifest = load_resume_manifest(out, "digest-a", RUN_KWARGS["config_snapshot"])
        with pytest.raises(ManifestMismatch):
            build_pref(list(reversed(records)), out, MockBackend(seed=9), seed=9,
                       resume_manifest=resume_manifest)


class TestInfusedBuild:
    @pytest.fixture()
    def sft_path(self, tmp_path, image_corpus) -> Path:
        return make_sft_file(tmp_path / "sft.jsonl", count=100)

    def test_subset_selection_is_seed_stable(self, sft_path):
        records = load_sft_records(sft_path)
        a = select_infusion_subset(records, 5, 42)
        b = select_infusion_subset(records, 5, 42)
        assert a == b and len(a) == 5
        assert a == sorted(a)
        assert select_infusion_subset(records, 5, 43) != a

    def test_text_only_rows_are_excluded(self, sft_path):
        records = load_sft_records(sft_path)
        pool_ids = {records[i].sft_id for i in select_infusion_subset(records, 80, 1)}
        text_only = {r.sft_id for r in records if not r.image_ref}
        assert not pool_ids & text_only

    def test_subset_larger_than_pool_rejected(self, sft_path):
        records = load_sft_records(sft_path)
        with pytest.raises(ValueError):
            select_infusion_subset(records, 81, 1)  # only 80 rows carry images

    def test_records_follow_the_template(self, sft_path, image_corpus, tmp_path):
        records = load_sft_records(sft_path)
        out = tmp_path / "infused.jsonl"
        _, manifest = build_infused_dataset(
            records, 10, image_corpus, out, MockBackend(seed=4),
            PromptRegistry.defaults(), 4, **RUN_KWARGS,
        )
        by_id = {r.sft_id: r for r in records}
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 10
        for obj in lines:
            src = by_id[obj["id"]]
            assert obj["completion"] == src.first_completion()
            assert obj["prompt"] == (
                f"Image description: {obj['description']}\n{src.first_instruction()}"
            )
        assert validate_dataset(out, "infused").ok

    def test_rerun_is_byte_identical(self, sft_path, image_corpus, tmp_path):
        records = load_sft_records(sft_path)
        out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            build_infused_dataset(
                records, 12, image_corpus, out, MockBackend(seed=4),
                PromptRegistry.defaults(), 4, **RUN_KWARGS,
            )
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_missing_image_is_skipped(self, tmp_path, image_corpus):
        sft = tmp_path / "sft.jsonl"
        rows = []
        for i in range(4):
            rows.append(
                {
                    "id": f"s{i}",
                    "image": "img_0000.png" if i else "does_not_exist.png",
                    "conversations": [
                        {"from": "human", "value": "Q"},
                        {"from": "gpt", "value": "A"},
                    ],
                }
            )
        sft.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        records = load_sft_records(sft)
        out = tmp_path / "infused.jsonl"
        with pytest.raises(SkipRateExceeded):
            build_infused_dataset(
                records, 4, image_corpus, out, MockBackend(seed=1),
                PromptRegistry.defaults(), 1, **RUN_KWARGS,
            )
        manifest = RunManifest.load(manifest_path(out))
        assert manifest.items["s0"]["status"] == "skipped"

    def test_sft_loader_rejects_malformed_lines(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "x", "conversations": [{"from": "gpt", "value": "A"}]}\n')
        with pytest.raises(ValueError) as err:
            load_sft_records(bad)
        assert "line 1" in str(err.value)


class TestValidate:
    def test_broken_preference_line_is_reported(self, tmp_path):
        path = tmp_path / "x.jsonl"
        good = {
            "image": "a.png", "prompt": "p", "chosen": "c", "rejected": "r",
            "provenance": {"type": "bad_prompt", "prompt_id": "bad.x"}, "meta": {},
        }
        broken = {k: v for k, v in good.items() if k != "rejected"}
        path.write_text(json.dumps(good) + "\n" + json.dumps(broken) + "\n")
        report = validate_dataset(path, "preference")
        assert not report.ok
        assert [n for n, _ in report.violations] == [2]

    def test_identical_pair_is_a_violation(self, tmp_path):
        path = tmp_path / "x.jsonl"
        obj = {
            "image": "a.png", "prompt": "p", "chosen": "same", "rejected": "same",
            "provenance": {"type": "bad_prompt", "prompt_id": "b"}, "meta": {},
        }
        path.write_text(json.dumps(obj) + "\n")
        assert not validate_dataset(path, "preference").ok

    def test_infused_prefix_violation(self, tmp_path):
        path = tmp_path / "x.jsonl"
        obj = {
            "id": "a", "image": "a.png", "prompt": "Wrong prefix\nQ",
            "completion": "c", "description": "d",
        }
        path.write_text(json.dumps(obj) + "\n")
        report = validate_dataset(path, "infused")
        assert any("template" in msg for _, msg in report.violations)

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text("{not json}\n")
        report = validate_dataset(path, "preference")
        assert report.violations and report.violations[0][0] == 1

    def test_unreadable_file_is_fatal(self, tmp_path):
        with pytest.raises(IngestError):
            validate_dataset(tmp_path / "missing.jsonl", "preference")

    def test_unknown_schema_rejected(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text("{}\n")
        with pytest.raises(ValueError):
            validate_dataset(path, "other")
