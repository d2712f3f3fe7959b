"""
Manifests and cross-validation fold plans for SceneMix

A manifest lists one clip per line: clip path, scene class, location id,
separated by tabs or commas (detected from the first record, then fixed
for the file). Blank lines and lines starting with '#' are skipped;
relative clip paths are resolved against the manifest's directory.
"""

import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .audio_io import N_CLASSES, SCENE_CLASSES, SceneClass, scene_by_name, synthesize_scene, write_wav
from .errors import DataError, FoldPlanError, ManifestError
from .fileio import atomic_write
from .logger import logger

DCASE_FOLD_FILE = re.compile(r"^fold(\d+)_evaluate\.txt$")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path  # resolved clip path
    scene: SceneClass
    location: str
    raw: str = ""  # path exactly as written in the manifest


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    source: Optional[Path] = None
    _index: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> ManifestEntry:
        return self.entries[index]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.scene.id for e in self.entries], dtype=np.int64)

    @property
    def locations(self) -> list[str]:
        return [e.location for e in self.entries]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES) if self.entries else np.zeros(N_CLASSES, dtype=np.int64)

    def subset(self, indices) -> "Manifest":
        return Manifest(entries=[self.entries[i] for i in indices], source=self.source)

    def find(self, text: str, base_dirs: list[Path]) -> Optional[int]:
        """Index of the entry a path written in another file refers to, or None."""
        if self._index is None:
            self._index = (
                {e.raw: i for i, e in enumerate(self.entries)},
                {e.path: i for i, e in enumerate(self.entries)},
            )
        by_raw, by_path = self._index
        if text in by_raw:
            return by_raw[text]
        candidate = Path(text)
        if candidate.is_absolute():
            return by_path.get(candidate.resolve())
        for base in base_dirs:
            index = by_path.get((base / candidate).resolve())
            if index is not None:
                return index
        return None


# ==================== MANIFEST I/O ====================

def _records(path: Path) -> Iterator[tuple[int, list[str]]]:
    """(line number, fields) for every record line, with the delimiter fixed by the first record."""
    delimiter = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if delimiter is None:
                delimiter = "\t" if "\t" in line else ","
            yield line_no, [part.strip() for part in line.split(delimiter)]


def load_manifest(path: Path) -> Manifest:
    """
    Parse a manifest file.

    Raises:
        ManifestError: unknown class, missing field or duplicate clip (with line number)
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent

    entries: list[ManifestEntry] = []
    seen: dict[Path, int] = {}
    for line_no, parts in _records(path):
        if len(parts) < 3:
            raise ManifestError(f"{path}:{line_no}: expected clip_path, class, location_id; got {len(parts)} field(s)")
        raw, class_name, location = parts[0], parts[1], parts[2]
        if not raw:
            raise ManifestError(f"{path}:{line_no}: empty clip path")
        if not location:
            raise ManifestError(f"{path}:{line_no}: empty location id")
        try:
            scene = scene_by_name(class_name)
        except DataError:
            raise ManifestError(f"{path}:{line_no}: unknown scene class {class_name!r}") from None

        resolved = (base / raw).resolve() if not Path(raw).is_absolute() else Path(raw).resolve()
        if resolved in seen:
            raise ManifestError(f"{path}:{line_no}: duplicate clip {raw} (first listed on line {seen[resolved]})")
        seen[resolved] = line_no
        entries.append(ManifestEntry(path=resolved, scene=scene, location=location, raw=raw))

    logger.info(f"Loaded manifest {path.name}: {len(entries)} clips, {len(set(e.location for e in entries))} locations")
    return Manifest(entries=entries, source=path)


def _relative(target: Path, directory: Path) -> str:
    """Path written relative to `directory` when possible, POSIX separators."""
    try:
        return Path(os.path.relpath(target, directory)).as_posix()
    except ValueError:
        return target.as_posix()  # different drive on Windows


def write_manifest(manifest: Manifest, path: Path) -> None:
    """Atomic tab-separated manifest; clip paths relative to the file's directory."""
    path = Path(path)
    directory = path.parent.resolve()
    with atomic_write(path, "w", encoding="utf-8") as f:
        for entry in manifest:
            f.write(f"{_relative(entry.path, directory)}\t{entry.scene.name}\t{entry.location}\n")


# ==================== FOLD PLANS ====================

@dataclass
class FoldPlan:
    """k disjoint folds of manifest indices. With k=1 the single fold is both train and validation."""
    folds: list[list[int]]

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def degenerate(self) -> bool:
        return self.k == 1

    def fold_of(self) -> dict[int, int]:
        return {i: f for f, members in enumerate(self.folds) for i in members}

    def validation_indices(self, fold_index: int) -> list[int]:
        self._check_index(fold_index)
        return sorted(self.folds[fold_index])

    def train_indices(self, fold_index: int) -> list[int]:
        self._check_index(fold_index)
        if self.degenerate:
            return sorted(self.folds[0])
        return sorted(i for f, members in enumerate(self.folds) if f != fold_index for i in members)

    def _check_index(self, fold_index: int) -> None:
        if not 0 <= fold_index < self.k:
            raise FoldPlanError(f"fold index {fold_index} out of range for a {self.k}-fold plan")

    def check_partition(self, n_clips: int) -> None:
        """Folds must be disjoint and cover 0..n_clips-1. With k > 1 no fold may be empty."""
        empty = [f for f, members in enumerate(self.folds) if not members]
        if self.k > 1 and empty:
            raise FoldPlanError(f"fold {empty[0]} has no clips; every fold of a {self.k}-fold plan needs at least one")
        counts = Counter(i for members in self.folds for i in members)
        repeated = sorted(i for i, c in counts.items() if c > 1)
        if repeated:
            raise FoldPlanError(f"clips assigned to more than one fold: {repeated[:10]}")
        missing = sorted(set(range(n_clips)) - set(counts))
        if missing:
            raise FoldPlanError(f"{len(missing)} clip(s) have no fold, first index {missing[0]}")
        extra = sorted(set(counts) - set(range(n_clips)))
        if extra:
            raise FoldPlanError(f"fold plan refers to clip indices outside the manifest: {extra[:10]}")

    def leaking_locations(self, manifest: Manifest) -> list[str]:
        """Locations that appear in more than one fold."""
        folds_per_location: dict[str, set[int]] = {}
        for f, members in enumerate(self.folds):
            for i in members:
                folds_per_location.setdefault(manifest[i].location, set()).add(f)
        return sorted(loc for loc, folds in folds_per_location.items() if len(folds) > 1)


def _majority_class(labels: list[int]) -> int:
    counts = np.bincount(labels, minlength=N_CLASSES)
    return int(np.argmax(counts))  # first maximum = lowest id


def make_folds(manifest: Manifest, k: int = 4, seed: int = 0) -> FoldPlan:
    """
    Location-grouped folds.

    Locations are sorted, shuffled with `seed`, grouped by their majority
    class and dealt round-robin into k folds with one counter shared across
    classes, so fold sizes differ by at most one location and every class is
    spread as evenly as the deal allows.
    """
    if k < 1:
        raise FoldPlanError(f"k must be >= 1, got {k}")
    locations = sorted(set(manifest.locations))
    if len(locations) < k:
        raise FoldPlanError(f"need at least {k} distinct locations for {k} folds, manifest has {len(locations)}")

    rng = np.random.default_rng(seed)
    order = [locations[i] for i in rng.permutation(len(locations))]

    labels_by_location: dict[str, list[int]] = {}
    for entry in manifest:
        labels_by_location.setdefault(entry.location, []).append(entry.scene.id)

    by_class: dict[int, list[str]] = {}
    for location in order:
        by_class.setdefault(_majority_class(labels_by_location[location]), []).append(location)

    fold_of_location: dict[str, int] = {}
    counter = 0
    for class_id in sorted(by_class):
        for location in by_class[class_id]:
            fold_of_location[location] = counter % k
            counter += 1

    folds = [[] for _ in range(k)]
    for index, entry in enumerate(manifest):
        folds[fold_of_location[entry.location]].append(index)

    plan = FoldPlan(folds=folds)
    plan.check_partition(len(manifest))
    logger.info(f"Made {k}-fold plan over {len(locations)} locations: fold sizes {[len(f) for f in folds]}")
    return plan


def _finish_external_plan(plan: FoldPlan, manifest: Manifest, source: Path) -> FoldPlan:
    plan.check_partition(len(manifest))
    leaking = plan.leaking_locations(manifest)
    if leaking:
        logger.warning(
            f"Fold plan {source} places {len(leaking)} location(s) in more than one fold "
            f"(e.g. {leaking[0]}); using it as given"
        )
    return plan


def load_fold_plan(path: Path, manifest: Manifest) -> FoldPlan:
    """
    Read a (clip_path, fold_index) file, or a DCASE evaluation-setup directory.

    Every manifest clip must have exactly one fold; clips not in the manifest
    are an error. Location leakage is only reported as a warning.
    """
    path = Path(path)
    if path.is_dir():
        return load_dcase_setup(path, manifest)
    if not path.is_file():
        raise FoldPlanError(f"fold plan not found: {path}")

    bases = [path.parent]
    if manifest.source is not None:
        bases.append(manifest.source.parent)

    assignments: dict[int, int] = {}
    declared_k = 0
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            match = re.match(r"^#\s*folds:\s*(\d+)", line.strip())
            if match:
                declared_k = int(match.group(1))

    for line_no, parts in _records(path):
        if len(parts) < 2:
            raise FoldPlanError(f"{path}:{line_no}: expected clip_path and fold_index")
        index = manifest.find(parts[0], bases)
        if index is None:
            raise FoldPlanError(f"{path}:{line_no}: clip {parts[0]} is not in the manifest")
        try:
            fold = int(parts[1])
        except ValueError:
            raise FoldPlanError(f"{path}:{line_no}: fold index {parts[1]!r} is not an integer") from None
        if fold < 0:
            raise FoldPlanError(f"{path}:{line_no}: negative fold index {fold}")
        if index in assignments and assignments[index] != fold:
            raise FoldPlanError(f"{path}:{line_no}: clip {parts[0]} assigned to folds {assignments[index]} and {fold}")
        assignments[index] = fold

    missing = [manifest[i].raw or str(manifest[i].path) for i in range(len(manifest)) if i not in assignments]
    if missing:
        raise FoldPlanError(f"{len(missing)} manifest clip(s) have no fold assignment, e.g. {missing[0]}")

    k = max([declared_k] + [f + 1 for f in assignments.values()])
    folds = [[] for _ in range(k)]
    for index in sorted(assignments):
        folds[assignments[index]].append(index)
    logger.info(f"Loaded {k}-fold plan from {path.name}")
    return _finish_external_plan(FoldPlan(folds=folds), manifest, path)


def load_dcase_setup(directory: Path, manifest: Manifest) -> FoldPlan:
    """
    Fold plan from DCASE `fold<N>_evaluate.txt` files.

    Each file lists the clips validated in fold N (1-based); paths are
    resolved against the setup directory and its parent (the dataset root).
    """
    directory = Path(directory)
    files = {}
    for item in directory.iterdir():
        match = DCASE_FOLD_FILE.match(item.name)
        if match:
            files[int(match.group(1))] = item
    if not files:
        raise FoldPlanError(f"no fold<N>_evaluate.txt files in {directory}")
    if sorted(files) != list(range(1, len(files) + 1)):
        raise FoldPlanError(f"fold files in {directory} are not numbered 1..{len(files)}: {sorted(files)}")

    bases = [directory, directory.parent]
    if manifest.source is not None:
        bases.append(manifest.source.parent)

    folds = [[] for _ in files]
    assigned: dict[int, int] = {}
    for number in sorted(files):
        for line_no, parts in _records(files[number]):
            index = manifest.find(parts[0], bases)
            if index is None:
                raise FoldPlanError(f"{files[number]}:{line_no}: clip {parts[0]} is not in the manifest")
            if index in assigned:
                raise FoldPlanError(
                    f"{files[number]}:{line_no}: clip {parts[0]} is already evaluated in fold {assigned[index] + 1}"
                )
            assigned[index] = number - 1
            folds[number - 1].append(index)

    missing = [manifest[i].raw for i in range(len(manifest)) if i not in assigned]
    if missing:
        raise FoldPlanError(f"{len(missing)} manifest clip(s) are in no evaluate file, e.g. {missing[0]}")
    logger.info(f"Loaded DCASE setup {directory}: {len(files)} folds")
    return _finish_external_plan(FoldPlan(folds=[sorted(f) for f in folds]), manifest, directory)


def write_fold_plan(plan: FoldPlan, manifest: Manifest, path: Path) -> None:
    """Atomic tab-separated (clip_path, fold_index) file with a '# folds: k' header."""
    path = Path(path)
    directory = path.parent.resolve()
    fold_of = plan.fold_of()
    with atomic_write(path, "w", encoding="utf-8") as f:
        f.write(f"# folds: {plan.k}\n")
        for index, entry in enumerate(manifest):
            f.write(f"{_relative(entry.path, directory)}\t{fold_of[index]}\n")


# ==================== SYNTHETIC CORPUS ====================

def synthesize_corpus(
    out_dir: Path,
    clips_per_class: int = 8,
    duration_s: float = 30.0,
    seed: int = 0,
    clips_per_location: int = 4,
    sample_rate: int = 44100,
    bit_depth: int = 16
) -> Manifest:
    """
    Write a labeled stereo WAV corpus and its manifest (out_dir/manifest.tsv).

    Clips of one class are grouped into locations of `clips_per_location`
    consecutive clips. The tree depends only on the arguments.
    """
    if clips_per_class < 1:
        raise DataError(f"clips_per_class must be >= 1, got {clips_per_class}")
    if clips_per_location < 1:
        raise DataError(f"clips_per_location must be >= 1, got {clips_per_location}")

    out_dir = Path(out_dir)
    entries = []
    for scene in SCENE_CLASSES:
        for n in range(clips_per_class):
            clip_seed = int(np.random.SeedSequence([seed, n]).generate_state(1)[0])
            clip = synthesize_scene(scene, clip_seed, duration_s, sample_rate)
            path = out_dir / "audio" / scene.slug / f"{scene.slug}_{n:03d}.wav"
            write_wav(clip, path, bit_depth)
            location = f"{scene.slug}_loc{n // clips_per_location:02d}"
            entries.append(ManifestEntry(path=path.resolve(), scene=scene, location=location,
                                         raw=path.relative_to(out_dir).as_posix()))
        logger.debug(f"Synthesized {clips_per_class} clips of {scene.name}")

    manifest = Manifest(entries=entries, source=out_dir / "manifest.tsv")
    write_manifest(manifest, out_dir / "manifest.tsv")
    logger.info(f"Synthesized {len(entries)} clips ({duration_s:g} s, {sample_rate} Hz) into {out_dir}")
    return manifest
