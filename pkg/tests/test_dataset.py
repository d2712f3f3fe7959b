"""
Tests for manifests, fold plans and the synthetic corpus
"""

import filecmp
from pathlib import Path

import numpy as np
import pytest

from src.dataset import (
    FoldPlan,
    Manifest,
    ManifestEntry,
    load_fold_plan,
    load_manifest,
    make_folds,
    synthesize_corpus,
    write_fold_plan,
    write_manifest,
)
from src.audio_io import scene_by_name
from src.errors import FoldPlanError, ManifestError


def _manifest(locations_per_class: int, clips_per_location: int = 2) -> Manifest:
    """In-memory manifest over the first three classes."""
    entries = []
    for name in ("bus", "car", "home"):
        scene = scene_by_name(name)
        for loc in range(locations_per_class):
            for clip in range(clips_per_location):
                raw = f"{name}/{loc}_{clip}.wav"
                entries.append(ManifestEntry(path=Path("/data") / raw, scene=scene, location=f"{name}{loc}", raw=raw))
    return Manifest(entries=entries)


class TestLoadManifest:
    def test_tab_separated_with_comments(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text(
            "# development set\n"
            "audio/a.wav\toffice\tloc1\n"
            "\n"
            "audio/b.wav\tcafe/restaurant\tloc2\n",
            encoding="utf-8",
        )
        manifest = load_manifest(path)
        assert len(manifest) == 2
        assert manifest[1].scene.name == "cafe/restaurant"
        assert manifest[0].path == (tmp_path / "audio" / "a.wav").resolve()
        assert manifest[0].raw == "audio/a.wav"
        assert manifest.locations == ["loc1", "loc2"]

    def test_comma_separated(self, tmp_path):
        path = tmp_path / "meta.csv"
        path.write_text("x.wav,beach,l1\ny.wav,park,l2\n", encoding="utf-8")
        assert list(load_manifest(path).labels) == [7, 14]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("# nothing yet\n", encoding="utf-8")
        manifest = load_manifest(path)
        assert len(manifest) == 0
        assert manifest.class_counts().sum() == 0

    def test_unknown_class_reports_line(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text("a.wav\toffice\tl1\n\nb.wav\tspaceship\tl2\n", encoding="utf-8")
        with pytest.raises(ManifestError, match="meta.tsv:3"):
            load_manifest(path)

    def test_duplicate_clip(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text("a.wav\toffice\tl1\n./a.wav\thome\tl2\n", encoding="utf-8")
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text("a.wav\toffice\n", encoding="utf-8")
        with pytest.raises(ManifestError, match=":1"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope.tsv")

    def test_write_then_load(self, tmp_path):
        original = tmp_path / "meta.tsv"
        original.write_text("clips/a.wav\toffice\tl1\nclips/b.wav\thome\tl2\n", encoding="utf-8")
        manifest = load_manifest(original)

        copy = tmp_path / "out" / "copy.tsv"
        write_manifest(manifest, copy)
        reloaded = load_manifest(copy)
        assert [e.path for e in reloaded] == [e.path for e in manifest]
        assert [e.scene for e in reloaded] == [e.scene for e in manifest]


class TestMakeFolds:
    def test_locations_never_span_folds(self):
        manifest = _manifest(locations_per_class=8)
        plan = make_folds(manifest, k=4, seed=1)
        plan.check_partition(len(manifest))
        assert plan.leaking_locations(manifest) == []

    def test_balanced_fold_sizes(self):
        manifest = _manifest(locations_per_class=20, clips_per_location=1)
        plan = make_folds(manifest, k=4, seed=0)
        assert sorted(len(f) for f in plan.folds) == [15, 15, 15, 15]
        for fold in plan.folds:
            counts = np.bincount(manifest.labels[fold], minlength=15)
            assert set(counts[[0, 2, 6]]) == {5}

    def test_four_locations_one_per_fold(self):
        entries = [e for e in _manifest(locations_per_class=2) if e.location in ("bus0", "bus1", "car0", "home1")]
        plan = make_folds(Manifest(entries=entries), k=4)
        assert sorted(len(f) for f in plan.folds) == [2, 2, 2, 2]

    def test_deterministic(self):
        manifest = _manifest(locations_per_class=6)
        assert make_folds(manifest, 3, seed=9).folds == make_folds(manifest, 3, seed=9).folds

    def test_too_few_locations(self):
        with pytest.raises(FoldPlanError):
            make_folds(_manifest(locations_per_class=1), k=4)

    def test_train_and_validation_indices(self):
        plan = FoldPlan(folds=[[0, 2], [1, 3]])
        assert plan.validation_indices(0) == [0, 2]
        assert plan.train_indices(0) == [1, 3]
        with pytest.raises(FoldPlanError):
            plan.train_indices(2)

    def test_single_fold_trains_and_validates_on_everything(self):
        plan = FoldPlan(folds=[[0, 1, 2]])
        assert plan.degenerate
        assert plan.train_indices(0) == plan.validation_indices(0) == [0, 1, 2]


class TestFoldPlanFiles:
    @pytest.fixture
    def manifest(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text("".join(f"audio/c{i}.wav\toffice\tloc{i // 2}\n" for i in range(8)), encoding="utf-8")
        return load_manifest(path)

    def test_write_then_load(self, tmp_path, manifest):
        plan = make_folds(manifest, k=2, seed=0)
        write_fold_plan(plan, manifest, tmp_path / "plans" / "folds.tsv")
        assert load_fold_plan(tmp_path / "plans" / "folds.tsv", manifest).folds == plan.folds

    def test_all_zero_is_a_single_fold(self, tmp_path, manifest):
        path = tmp_path / "folds.tsv"
        path.write_text("".join(f"audio/c{i}.wav\t0\n" for i in range(8)), encoding="utf-8")
        plan = load_fold_plan(path, manifest)
        assert plan.k == 1 and plan.degenerate

    def test_declared_empty_fold(self, tmp_path, manifest):
        path = tmp_path / "folds.tsv"
        path.write_text("# folds: 3\n" + "".join(f"audio/c{i}.wav\t{i % 2}\n" for i in range(8)), encoding="utf-8")
        with pytest.raises(FoldPlanError, match="fold 2 has no clips"):
            load_fold_plan(path, manifest)

    def test_gap_in_fold_numbers(self, tmp_path, manifest):
        path = tmp_path / "folds.tsv"
        path.write_text("".join(f"audio/c{i}.wav\t{2 * (i % 2)}\n" for i in range(8)), encoding="utf-8")
        with pytest.raises(FoldPlanError, match="fold 1 has no clips"):
            load_fold_plan(path, manifest)

    def test_empty_fold_in_memory(self):
        with pytest.raises(FoldPlanError, match="fold 2"):
            FoldPlan(folds=[[0, 2], [1, 3], []]).check_partition(4)

    def test_unknown_clip(self, tmp_path, manifest):
        path = tmp_path / "folds.tsv"
        path.write_text("audio/zzz.wav\t0\n", encoding="utf-8")
        with pytest.raises(FoldPlanError, match="zzz.wav"):
            load_fold_plan(path, manifest)

    def test_missing_assignment(self, tmp_path, manifest):
        path = tmp_path / "folds.tsv"
        path.write_text("".join(f"audio/c{i}.wav\t0\n" for i in range(7)), encoding="utf-8")
        with pytest.raises(FoldPlanError, match="no fold"):
            load_fold_plan(path, manifest)

    def test_leaking_plan_loads_with_warning(self, tmp_path, manifest, capsys):
        path = tmp_path / "folds.tsv"
        path.write_text("".join(f"audio/c{i}.wav\t{i % 2}\n" for i in range(8)), encoding="utf-8")
        plan = load_fold_plan(path, manifest)
        assert plan.leaking_locations(manifest) == ["loc0", "loc1", "loc2", "loc3"]
        assert "more than one fold" in capsys.readouterr().err

    def test_dcase_setup_directory(self, tmp_path, manifest):
        setup = tmp_path / "evaluation_setup"
        setup.mkdir()
        (setup / "fold1_evaluate.txt").write_text("audio/c0.wav\toffice\naudio/c1.wav\toffice\n", encoding="utf-8")
        (setup / "fold2_evaluate.txt").write_text(
            "".join(f"audio/c{i}.wav\toffice\n" for i in range(2, 8)), encoding="utf-8"
        )
        plan = load_fold_plan(setup, manifest)
        assert plan.folds == [[0, 1], [2, 3, 4, 5, 6, 7]]

    def test_dcase_setup_gap_in_numbering(self, tmp_path, manifest):
        setup = tmp_path / "evaluation_setup"
        setup.mkdir()
        (setup / "fold2_evaluate.txt").write_text("audio/c0.wav\toffice\n", encoding="utf-8")
        with pytest.raises(FoldPlanError):
            load_fold_plan(setup, manifest)


class TestSynthesizeCorpus:
    def test_layout_and_manifest(self, tmp_path):
        manifest = synthesize_corpus(tmp_path / "c", clips_per_class=2, duration_s=0.2, sample_rate=8000,
                                     clips_per_location=2)
        assert len(manifest) == 30
        assert list(manifest.class_counts()) == [2] * 15
        assert len(set(manifest.locations)) == 15

        reloaded = load_manifest(tmp_path / "c" / "manifest.tsv")
        assert [e.path for e in reloaded] == [e.path for e in manifest]
        assert all(e.path.is_file() for e in reloaded)

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            synthesize_corpus(tmp_path / name, clips_per_class=1, duration_s=0.2, sample_rate=8000, seed=4)
        a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.wav"))
        b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.wav"))
        assert a_files == b_files and len(a_files) == 15
        for rel in a_files:
            assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False)
        assert (tmp_path / "a" / "manifest.tsv").read_text() == (tmp_path / "b" / "manifest.tsv").read_text()
