"""
Tests for the scenemix command line
"""

import json

import pytest

from src.audio_io import SCENE_NAMES, scene_by_id, synthesize_scene, write_wav
from src.main import main

SMALL_CONFIG = {
    "feature": {"sample_rate": 8000, "window_s": 0.032, "hop_s": 0.032, "n_mels": 16, "patch_frames": 16},
    "network": "tiny",
    "optimizer": {"learning_rate": 0.05, "lr_schedule": "constant"},
    "batch_size": 8,
    "epochs": 1,
    "folds": 2,
}


def run(*argv) -> int:
    return main(["--workers", "1", *map(str, argv)])


def run_json(capsys, *argv) -> dict:
    capsys.readouterr()
    assert main(["--workers", "1", "--format", "json", *map(str, argv)]) == 0
    return json.loads(capsys.readouterr().out)


@pytest.fixture
def corpus_dir(tmp_path, capsys):
    out = tmp_path / "corpus"
    data = run_json(
        capsys, "synth-data", "--out", out, "--clips-per-class", 2, "--duration", 1.1,
        "--sample-rate", 8000, "--clips-per-location", 1,
    )
    assert data["clips"] == 30
    return out


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG), encoding="utf-8")
    return path


class TestParsing:
    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "synth-data" in capsys.readouterr().out

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "scenemix" in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        assert main(["compare", "--records", "x.jsonl", "--bogus"]) == 1
        assert "--bogus" in capsys.readouterr().err

    def test_missing_command(self):
        assert main([]) == 1

    def test_bad_worker_count(self):
        assert main(["--workers", "0", "compare", "--records", "x"]) == 1

    def test_bad_clip_count(self, tmp_path):
        assert run("synth-data", "--out", tmp_path, "--clips-per-class", 0) == 1


class TestDataCommands:
    def test_synth_data_writes_a_manifest(self, corpus_dir):
        lines = (corpus_dir / "manifest.tsv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 30
        assert len(list(corpus_dir.rglob("*.wav"))) == 30

    def test_folds(self, corpus_dir, tmp_path, capsys):
        plan = tmp_path / "plan.tsv"
        data = run_json(capsys, "folds", "--manifest", corpus_dir / "manifest.tsv", "--k", 3, "--out", plan)
        assert data["k"] == 3
        assert sum(data["fold_sizes"]) == 30
        assert max(data["fold_sizes"]) - min(data["fold_sizes"]) <= 1
        assert plan.is_file()

    def test_missing_manifest(self, tmp_path, config_path, capsys):
        code = run("train", "--manifest", tmp_path / "absent.tsv", "--config", config_path, "--out", tmp_path / "run")
        assert code == 2
        assert "absent.tsv" in capsys.readouterr().err

    def test_extract_with_previews(self, corpus_dir, config_path, tmp_path, capsys):
        cache, previews = tmp_path / "cache", tmp_path / "previews"
        args = ["extract", "--manifest", corpus_dir / "manifest.tsv", "--config", config_path, "--cache", cache]

        first = run_json(capsys, *args, "--preview", previews)
        assert first["misses"] == 30 and first["hits"] == 0
        assert len(list(previews.glob("*.png"))) == 31
        assert (previews / "mixup.png").is_file()

        second = run_json(capsys, *args)
        assert second["hits"] == 30 and second["misses"] == 0
        assert second["fingerprint"] == first["fingerprint"]

    def test_extract_needs_a_cache(self, corpus_dir, config_path, monkeypatch):
        monkeypatch.delenv("SCENEMIX_CACHE_DIR", raising=False)
        assert run("extract", "--manifest", corpus_dir / "manifest.tsv", "--config", config_path) == 1


class TestTrainingFlow:
    def test_train_evaluate_predict_compare(self, corpus_dir, config_path, tmp_path, capsys):
        manifest = corpus_dir / "manifest.tsv"
        out = tmp_path / "run"

        record = run_json(capsys, "train", "--manifest", manifest, "--config", config_path, "--out", out,
                          "--name", "smoke", "--eval-manifest", manifest)
        assert record["name"] == "smoke"
        assert len(record["folds"]) == 2
        assert record["evaluation_model"] == "fold-ensemble"
        assert (out / "fold0.ckpt").is_file() and (out / "fold1.ckpt").is_file()

        predictions = tmp_path / "predictions.tsv"
        report = run_json(capsys, "evaluate", "--manifest", manifest, "--checkpoint", out / "fold0.ckpt",
                          "--checkpoint", out / "fold1.ckpt", "--config", config_path,
                          "--predictions", predictions)
        assert report["n_clips"] == 30
        # the ensemble scored the same clips during training
        assert report["overall_accuracy"] == pytest.approx(record["evaluation_accuracy"])
        assert len(predictions.read_text(encoding="utf-8").splitlines()) == 31

        wav = next((corpus_dir).rglob("*.wav"))
        prediction = run_json(capsys, "predict", "--wav", wav, "--checkpoint", out / "fold0.ckpt",
                              "--strategy", "mean")
        assert prediction["predicted_class"] in SCENE_NAMES
        assert prediction["patches"] == 2
        assert sum(prediction["scores"].values()) == pytest.approx(1.0, abs=1e-6)

        assert run("compare", "--records", out / "records.jsonl") == 0
        assert "tiny" in capsys.readouterr().out

    def test_text_report(self, corpus_dir, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        assert run("train", "--manifest", corpus_dir / "manifest.tsv", "--config", config_path, "--out", out) == 0
        capsys.readouterr()
        assert run("evaluate", "--manifest", corpus_dir / "manifest.tsv", "--checkpoint", out / "fold0.ckpt") == 0
        assert "Overall accuracy" in capsys.readouterr().out

    def test_mismatched_feature_config(self, corpus_dir, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        assert run("train", "--manifest", corpus_dir / "manifest.tsv", "--config", config_path, "--out", out) == 0

        other = tmp_path / "other.json"
        changed = dict(SMALL_CONFIG, feature=dict(SMALL_CONFIG["feature"], n_mels=20))
        other.write_text(json.dumps(changed), encoding="utf-8")
        capsys.readouterr()
        code = run("evaluate", "--manifest", corpus_dir / "manifest.tsv", "--checkpoint", out / "fold0.ckpt",
                   "--config", other)
        assert code == 2
        assert "fingerprint" in capsys.readouterr().err

    def test_bad_config(self, corpus_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"epochs": 0}), encoding="utf-8")
        code = run("train", "--manifest", corpus_dir / "manifest.tsv", "--config", bad, "--out", tmp_path / "run")
        assert code == 1
        assert "epochs" in capsys.readouterr().err

    def test_unreadable_checkpoint(self, corpus_dir, tmp_path):
        broken = tmp_path / "broken.ckpt"
        broken.write_bytes(b"not a checkpoint")
        assert run("predict", "--wav", next(corpus_dir.rglob("*.wav")), "--checkpoint", broken) == 2

    def test_single_example_batches(self, corpus_dir, tmp_path, capsys):
        config = tmp_path / "batch1.json"
        config.write_text(json.dumps(dict(SMALL_CONFIG, batch_size=1)), encoding="utf-8")
        code = run("train", "--manifest", corpus_dir / "manifest.tsv", "--config", config, "--out", tmp_path / "run")
        assert code == 1
        assert "batch_size" in capsys.readouterr().err


@pytest.mark.slow
class TestOverfitPrediction:
    def test_synthesized_beach_clip_is_recognized(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        assert run("synth-data", "--out", corpus, "--clips-per-class", 4, "--duration", 3.1,
                   "--sample-rate", 16000, "--clips-per-location", 2) == 0

        config = tmp_path / "overfit.json"
        config.write_text(json.dumps({
            "feature": {"sample_rate": 16000, "window_s": 0.032, "hop_s": 0.032, "n_mels": 32, "patch_frames": 32},
            "network": "vgg_style",
            "optimizer": {"learning_rate": 0.01, "lr_schedule": "constant"},
            "batch_size": 16,
            "epochs": 30,
            "folds": 1,
        }), encoding="utf-8")
        out = tmp_path / "run"
        assert run("train", "--manifest", corpus / "manifest.tsv", "--config", config, "--out", out) == 0

        wav = tmp_path / "beach.wav"
        write_wav(synthesize_scene(scene_by_id(7), seed=999, duration_s=3.1, sample_rate=16000), wav)
        prediction = run_json(capsys, "predict", "--wav", wav, "--checkpoint", out / "fold0.ckpt")
        assert prediction["predicted_id"] == 7
        assert prediction["predicted_class"] == "beach"
