"""Ingestion, stage-1 orchestration, training loop, and CLI behavior."""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from wscod.backends import (
    AFFIRMATIVE,
    NEGATIVE,
    OracleSegmenter,
    ScriptedAgent,
    ScriptedJudge,
)
from wscod.cli import main
from wscod.data import (
    DatasetLayout,
    DatasetManifest,
    ingest_dataset,
    make_fixture_corpus,
)
from wscod.errors import ConfigurationError, DataError
from wscod.net import tiny_config
from wscod.stage1 import SamplingParams, attach_pseudo_masks, run_stage1
from wscod.training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    lr_at,
    model_from_checkpoint,
    predict,
    train,
)


def scripted_trio(policy="retain"):
    return ScriptedAgent(AFFIRMATIVE), ScriptedAgent(NEGATIVE), ScriptedJudge(policy)


def small_corpus(tmp_path, n=3, seed=0):
    root = tmp_path / "corpus"
    manifest = make_fixture_corpus(root, n_images=n, size=64, seed=seed)
    return root, manifest


class TestIngest:
    def test_three_image_fixture(self, tmp_path):
        _, manifest = small_corpus(tmp_path, n=3)
        assert len(manifest.records) == 3
        assert all(r.usable_for_training for r in manifest.records)
        assert all(r.gt_path for r in manifest.records)

    def test_missing_scribble_is_flagged(self, tmp_path):
        root, _ = small_corpus(tmp_path, n=3)
        (root / "scribbles" / "img_0001.png").unlink()
        manifest = ingest_dataset(root)
        flagged = {r.image_id: r.flags for r in manifest.flagged}
        assert flagged == {"img_0001": ["missing_scribble"]}

    def test_corrupt_image_is_flagged(self, tmp_path):
        root, _ = small_corpus(tmp_path, n=2)
        (root / "images" / "img_0000.png").write_bytes(b"not a png at all")
        manifest = ingest_dataset(root)
        assert manifest.records[0].flags == ["corrupt_image"]

    def test_mixed_extension_corpus_matches_directory_walk(self, tmp_path):
        root = tmp_path / "mixed"
        (root / "images").mkdir(parents=True)
        (root / "scribbles").mkdir()
        (root / "gt").mkdir()
        arr = np.zeros((8, 8, 3), dtype=np.uint8)
        names = ["a.png", "b.jpg", "c.bmp", "d.jpeg"]
        for name in names:
            Image.fromarray(arr).save(root / "images" / name)
        (root / "images" / "notes.txt").write_text("ignored")
        manifest = ingest_dataset(root)
        walked = sorted(
            p.stem for p in (root / "images").iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
        )
        assert [r.image_id for r in manifest.records] == walked

    def test_empty_dataset_is_error(self, tmp_path):
        (tmp_path / "images").mkdir()
        with pytest.raises(DataError):
            ingest_dataset(tmp_path)

    def test_manifest_round_trip(self, tmp_path):
        _, manifest = small_corpus(tmp_path, n=2)
        path = tmp_path / "manifest.json"
        manifest.save(path)
        loaded = DatasetManifest.load(path)
        assert loaded.split == manifest.split
        assert [r.image_id for r in loaded.records] == [r.image_id for r in manifest.records]


class TestLearningRate:
    def test_step_zero_is_zero(self):
        assert lr_at(0, 100, 20, 0.03) == 0.0

    def test_end_of_warmup_reaches_base_lr(self):
        assert lr_at(20, 100, 20, 0.03) == pytest.approx(0.03)

    def test_final_step_decays_to_zero(self):
        assert lr_at(100, 100, 20, 0.03) <= 1e-6 * 0.03

    def test_halfway_cosine_value(self):
        assert lr_at(60, 100, 20, 0.03) == pytest.approx(0.03 * 0.5)

    def test_warmup_is_linear(self):
        values = [lr_at(s, 100, 20, 0.03) for s in range(21)]
        diffs = np.diff(values)
        assert np.allclose(diffs, diffs[0])

    def test_monotone_decay_after_warmup(self):
        values = [lr_at(s, 200, 10, 0.03) for s in range(10, 201)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestStage1:
    def test_retain_judge_produces_all_masks(self, tmp_path):
        root, manifest = small_corpus(tmp_path)
        aff, neg, judge = scripted_trio("retain")
        seg = OracleSegmenter(gt_dir=root / "gt")
        result = run_stage1(manifest, seg, aff, neg, judge, tmp_path / "s1",
                            sampling=SamplingParams(d_min=4, window_radius=3), seed=0)
        assert result.n_retained == 3
        for rec in manifest.records:
            entry = result.manifest["images"][rec.image_id]
            assert entry["verdict"] == "RETAIN"
            assert (tmp_path / "s1" / entry["mask"]).exists()

    def test_discard_judge_produces_no_masks(self, tmp_path):
        root, manifest = small_corpus(tmp_path)
        aff, neg, judge = scripted_trio("discard")
        seg = OracleSegmenter(gt_dir=root / "gt")
        result = run_stage1(manifest, seg, aff, neg, judge, tmp_path / "s1",
                            sampling=SamplingParams(d_min=4, window_radius=3), seed=0)
        assert result.n_retained == 0
        assert all(e["mask"] is None for e in result.manifest["images"].values())
        assert not list((tmp_path / "s1" / "masks").glob("*.png"))

    def test_resume_after_interrupt_converges(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=4)
        seg = OracleSegmenter(gt_dir=root / "gt")
        params = SamplingParams(d_min=4, window_radius=3)

        # interrupted: only the first two images get processed
        partial = DatasetManifest(split="train", records=manifest.records[:2])
        aff, neg, judge = scripted_trio()
        run_stage1(partial, seg, aff, neg, judge, tmp_path / "resumed",
                   sampling=params, seed=0)
        aff, neg, judge = scripted_trio()
        resumed = run_stage1(manifest, seg, aff, neg, judge, tmp_path / "resumed",
                             sampling=params, seed=0)

        aff, neg, judge = scripted_trio()
        fresh = run_stage1(manifest, seg, aff, neg, judge, tmp_path / "fresh",
                           sampling=params, seed=0)
        assert resumed.manifest == fresh.manifest

        # prompt records accumulate across the interrupt with no duplicates
        from wscod.prompts import load_prompt_sets

        grouped = load_prompt_sets(tmp_path / "resumed" / "prompts.jsonl")
        expected = load_prompt_sets(tmp_path / "fresh" / "prompts.jsonl")
        assert grouped == expected
        assert set(grouped) == {r.image_id for r in manifest.records}

    def test_skips_flagged_records(self, tmp_path):
        root, _ = small_corpus(tmp_path, n=3)
        (root / "scribbles" / "img_0002.png").unlink()
        manifest = ingest_dataset(root)
        aff, neg, judge = scripted_trio()
        seg = OracleSegmenter(gt_dir=root / "gt")
        result = run_stage1(manifest, seg, aff, neg, judge, tmp_path / "s1",
                            sampling=SamplingParams(d_min=4, window_radius=3), seed=0)
        assert result.manifest["images"]["img_0002"]["status"] == "skipped"
        assert result.n_retained == 2

    def test_attach_pseudo_masks(self, tmp_path):
        root, manifest = small_corpus(tmp_path)
        aff, neg, judge = scripted_trio()
        seg = OracleSegmenter(gt_dir=root / "gt")
        run_stage1(manifest, seg, aff, neg, judge, tmp_path / "s1",
                   sampling=SamplingParams(d_min=4, window_radius=3), seed=0)
        manifest = attach_pseudo_masks(manifest, tmp_path / "s1")
        assert all(r.pseudo_path for r in manifest.records)


def quick_config(**overrides):
    defaults = dict(
        epochs=2, warmup_epochs=1, batch_size=2, seed=0,
        network=tiny_config(), augment_hflip=False,
    )
    defaults.update(overrides)
    if defaults["warmup_epochs"] >= defaults["epochs"]:
        defaults["warmup_epochs"] = 0
    return TrainConfig(**defaults)


class TestTraining:
    def test_mask_supervision_zeroes_scribble_terms(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        manifest = attach_gt_as_pseudo(root, manifest)
        config = quick_config(supervision="mask")
        result = train(config, manifest, tmp_path / "run")
        for breakdown in result.breakdown_history:
            assert all(breakdown[f"scrib_{k}"] == 0.0 for k in (1, 2, 3))
            assert all(breakdown[f"debias_{k}"] == 0.0 for k in (1, 2, 3))
            assert all(breakdown[f"cod_{k}"] > 0.0 for k in (1, 2, 3))

    def test_disable_debias_only(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        config = quick_config(use_debias=False, epochs=1)
        result = train(config, manifest, tmp_path / "run")
        b = result.breakdown_history[0]
        assert all(b[f"debias_{k}"] == 0.0 for k in (1, 2, 3))
        assert any(b[f"scrib_{k}"] > 0.0 for k in (1, 2, 3))

    def test_fixed_seed_reproduces_loss_trajectory(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        a = train(quick_config(), manifest, tmp_path / "a")
        b = train(quick_config(), manifest, tmp_path / "b")
        assert a.loss_history == b.loss_history

    def test_resume_reproduces_trajectory(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        full_cfg = quick_config(epochs=4, checkpoint_every=2)
        full = train(full_cfg, manifest, tmp_path / "full")

        part = train(quick_config(epochs=4, checkpoint_every=2), manifest,
                     tmp_path / "part")
        ckpt = tmp_path / "part" / "checkpoint_ep0002.pt"
        assert ckpt.exists()
        resumed = train(quick_config(epochs=4), manifest, tmp_path / "part2",
                        resume_from=ckpt)
        tail = full.loss_history[-len(resumed.loss_history):]
        assert len(resumed.loss_history) == len(tail)
        for x, y in zip(resumed.loss_history, tail):
            assert x == pytest.approx(y, abs=1e-5)

    def test_checkpoint_round_trip_bit_exact(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        result = train(quick_config(epochs=1), manifest, tmp_path / "run")
        model, payload = model_from_checkpoint(result.checkpoint_path)
        assert payload["version"] == 1
        image = np.asarray(Image.open(manifest.records[0].image_path).convert("RGB"))
        before = predict(model, image)
        model2, _ = model_from_checkpoint(result.checkpoint_path)
        after = predict(model2, image)
        np.testing.assert_array_equal(before, after)

    def test_checkpoint_requires_version(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"model_state": {}}, path)
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_evaluate_with_oracle_predictor(self, tmp_path, monkeypatch):
        root, manifest = small_corpus(tmp_path, n=2)
        from wscod.scribbles import load_binary_mask

        gts = {r.image_id: load_binary_mask(r.gt_path) for r in manifest.records}
        order = [r.image_id for r in manifest.records]

        def fake_predict(model, image):
            return gts[order.pop(0)].astype(np.float64)

        monkeypatch.setattr("wscod.training.predict", fake_predict)
        model, _ = None, None
        metrics = evaluate(model, manifest)
        assert metrics["mae"] == 0.0
        assert metrics["s_measure"] == pytest.approx(1.0, abs=1e-9)

    def test_evaluate_empty_manifest_errors(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        for rec in manifest.records:
            rec.gt_path = ""
        with pytest.raises(DataError):
            evaluate(None, manifest)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(warmup_epochs=10, epochs=5)
        with pytest.raises(ConfigurationError):
            TrainConfig(supervision="nothing")
        with pytest.raises(ConfigurationError):
            TrainConfig(schedule="step")


def attach_gt_as_pseudo(root, manifest):
    for rec in manifest.records:
        rec.pseudo_path = rec.gt_path
    return manifest


class TestCli:
    def test_missing_config_file_is_exit_2(self, tmp_path):
        code = main(["sample-prompts", "--config", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path / "p.jsonl")])
        assert code == 2

    def test_missing_data_root_is_exit_2(self, tmp_path):
        code = main(["sample-prompts", "--out", str(tmp_path / "p.jsonl")])
        assert code == 2

    def test_bad_data_root_is_exit_3(self, tmp_path):
        code = main(["sample-prompts", "--data-root", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "p.jsonl")])
        assert code == 3

    def test_unreachable_backend_is_exit_4(self, tmp_path):
        root, _ = small_corpus(tmp_path, n=1)
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(
            "stage1:\n"
            "  sampling: {d_min: 4, window_radius: 3}\n"
            "  segmenter: {kind: remote, address: 'http://127.0.0.1:9', timeout_seconds: 0.2}\n"
        )
        code = main(["pseudo-label", "--config", str(cfg), "--data-root", str(root),
                     "--out", str(tmp_path / "s1")])
        assert code == 4

    def test_sample_prompts_happy_path(self, tmp_path, capsys):
        root, _ = small_corpus(tmp_path, n=2)
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("stage1:\n  sampling: {d_min: 4, window_radius: 3}\n")
        out = tmp_path / "prompts.jsonl"
        code = main(["sample-prompts", "--config", str(cfg),
                     "--data-root", str(root), "--out", str(out)])
        assert code == 0
        assert out.exists() and out.read_text().strip()
        assert "wrote" in capsys.readouterr().out

    def test_sampling_flags_override_config(self, tmp_path):
        root, _ = small_corpus(tmp_path, n=1)
        out = tmp_path / "prompts.jsonl"
        code = main(["sample-prompts", "--data-root", str(root), "--out", str(out),
                     "--d-min", "2", "--window-radius", "2", "--n-fg", "1", "--n-bg", "0"])
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().strip().splitlines()]
        assert len(lines) == 1 and lines[0]["polarity"] == "positive"

    def test_make_fixtures_and_analyze_bias(self, tmp_path, capsys):
        root = tmp_path / "fx"
        assert main(["make-fixtures", "--out", str(root), "--n-images", "2"]) == 0
        out = tmp_path / "bias"
        assert main(["analyze-bias", "--data-root", str(root), "--out", str(out),
                     "--bins", "10"]) == 0
        csv = (out / "bias_histogram.csv").read_text().strip().splitlines()
        assert csv[0].startswith("bin_lo,bin_hi")
        assert len(csv) == 11

    def test_dump_features_cli(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=1)
        result = train(quick_config(epochs=1), manifest, tmp_path / "run")
        out = tmp_path / "features"
        code = main(["dump-features", "--data-root", str(root), "--out", str(out),
                     "--checkpoint", str(result.checkpoint_path), "--max-images", "1"])
        assert code == 0
        grids = sorted(p.name for p in out.glob("*.png"))
        assert grids == ["img_0000_level1.png", "img_0000_level2.png", "img_0000_level3.png"]

    def test_train_writes_structured_log_lines(self, tmp_path):
        root, manifest = small_corpus(tmp_path, n=2)
        train(quick_config(epochs=1), manifest, tmp_path / "run",
              log_path=tmp_path / "run" / "train_log.jsonl")
        lines = (tmp_path / "run" / "train_log.jsonl").read_text().strip().splitlines()
        first = json.loads(lines[0])
        assert first["step"] == 0
        for key in ("lr", "total", "cod_1", "scrib_1", "debias_1"):
            assert key in first


class TestBackendEnvironment:
    def test_remote_address_from_environment(self, monkeypatch):
        from wscod.backends import RemoteSegmenter

        monkeypatch.setenv("WSCOD_BACKEND_ADDRESS", "http://127.0.0.1:1")
        seg = RemoteSegmenter()
        assert seg.address == "http://127.0.0.1:1"


class TestScribbleIO:
    def test_loader_validates_value_set(self, tmp_path):
        bad = np.full((4, 4), 9, dtype=np.uint8)
        Image.fromarray(bad, mode="L").save(tmp_path / "bad.png")
        from wscod.scribbles import load_scribbles

        with pytest.raises(DataError):
            load_scribbles(tmp_path / "bad.png")

    def test_round_trip(self, tmp_path):
        from wscod.scribbles import ScribbleAnnotation, load_scribbles, save_scribbles

        labels = np.zeros((6, 6), dtype=np.uint8)
        labels[1, 1] = 1
        labels[4, 4] = 2
        save_scribbles(tmp_path / "s.png", ScribbleAnnotation(labels))
        loaded = load_scribbles(tmp_path / "s.png")
        np.testing.assert_array_equal(loaded.labels, labels)

    def test_annotation_rejects_bad_values(self):
        from wscod.scribbles import ScribbleAnnotation

        with pytest.raises(DataError):
            ScribbleAnnotation(np.full((3, 3), 7, dtype=np.uint8))

    def test_gray_image_rejects_out_of_range(self):
        from wscod.scribbles import GrayImage

        with pytest.raises(DataError):
            GrayImage(np.full((2, 2), 300))
