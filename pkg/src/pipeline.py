"""
Training pipeline for SceneMix

Feature loading, the per-fold training loop, k-fold cross-validation,
run records and run comparison.
"""

import json
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .audio_io import N_CLASSES, read_wav
from .augment import mixup_arrays
from .config import MIN_BATCH, TrainConfig, save_train_config
from .dataset import FoldPlan, Manifest, load_fold_plan, make_folds
from .errors import DataError, NumericError
from .evaluation import score_clip_arrays, score_manifest
from .feature_cache import FeatureCache, default_cache_dir
from .features import clip_log_mel, compute_norm_stats, mel_filterbank, normalize_array, select_channels
from .fileio import write_text_atomic
from .logger import logger
from .nn.checkpoint import save_checkpoint
from .nn.network import ModelState, build_network
from .nn.optim import train_step


# ==================== RECORDS ====================

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    validation_accuracy: float
    learning_rate: float


@dataclass
class FoldRecord:
    fold_index: int
    n_train_clips: int
    n_validation_clips: int
    n_train_patches: int
    epochs: list[EpochRecord] = field(default_factory=list)
    validation_accuracy: float = 0.0  # final epoch, clip level
    checkpoint: Optional[str] = None
    wall_clock_s: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "FoldRecord":
        data = dict(data)
        data["epochs"] = [EpochRecord(**e) for e in data.get("epochs", [])]
        return cls(**data)


@dataclass
class RunRecord:
    """One cross-validation run; serialized as one JSON line."""
    name: str
    config: dict
    seed: int
    network: str
    channel_mode: str
    mixup: str  # ratio key: "0" when off, "0.2", "beta(0.2)", ...
    folds: list[FoldRecord] = field(default_factory=list)
    cv_mean: float = 0.0
    degenerate: bool = False  # k=1: train and validation sets are identical
    evaluation_accuracy: Optional[float] = None
    generalization_gap: Optional[float] = None
    evaluation_model: Optional[str] = None  # "all-folds" or "fold-ensemble"
    wall_clock_s: float = 0.0
    version: str = __version__

    @property
    def fold_accuracies(self) -> list[float]:
        return [f.validation_accuracy for f in self.folds]

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.channel_mode, self.network, self.mixup)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        data = dict(data)
        data["folds"] = [FoldRecord.from_dict(f) for f in data.get("folds", [])]
        try:
            return cls(**data)
        except TypeError as e:
            raise DataError(f"malformed run record: {e}") from e


def mean_accuracy(accuracies: Sequence[float]) -> float:
    if not accuracies:
        raise DataError("no fold accuracies to average")
    return sum(accuracies) / len(accuracies)


def append_record(record: RunRecord, path: Path) -> None:
    """Add one line to a records file (the whole file is rewritten atomically)."""
    path = Path(path)
    existing = path.read_text(encoding="utf-8") if path.exists() else ""
    if existing and not existing.endswith("\n"):
        existing += "\n"
    write_text_atomic(path, existing + record.to_json_line() + "\n")
    logger.info(f"Appended run record '{record.name}' to {path}")


def load_records(paths: Sequence[Path]) -> list[RunRecord]:
    records = []
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"records file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(RunRecord.from_dict(json.loads(line)))
                except (json.JSONDecodeError, DataError, TypeError) as e:
                    raise DataError(f"{path}:{line_no}: unreadable run record: {e}") from e
    return records


# ==================== FEATURES ====================

def load_clip_features(
    manifest: Manifest,
    config: TrainConfig,
    cache: Optional[FeatureCache] = None,
    workers: int = 1
) -> list[np.ndarray]:
    """
    Log-mel matrices [3][n_mels][frames] for every manifest clip, in manifest order.

    Extraction runs ahead on a thread pool; map() keeps results ordered.
    """
    filterbank = mel_filterbank(config.feature)

    def load(entry):
        if cache is not None:
            return cache.load(entry.path)
        return clip_log_mel(read_wav(entry.path), config.feature, filterbank, source=str(entry.path))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        clips = list(pool.map(load, manifest))
    if cache is not None:
        logger.info(f"Feature cache: {cache.hits} hits, {cache.misses} misses")
    return clips


def open_cache(config: TrainConfig, cache_dir: Optional[Path] = None) -> Optional[FeatureCache]:
    """Feature cache from an explicit directory, SCENEMIX_CACHE_DIR, or the config (in that order)."""
    directory = cache_dir or default_cache_dir() or (Path(config.cache_dir) if config.cache_dir else None)
    return FeatureCache(directory, config.feature) if directory else None


def build_patches(
    clips: Sequence[np.ndarray],
    indices: Sequence[int],
    labels: np.ndarray,
    patch_frames: int
) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping patches of the selected clips and one-hot targets, in clip order."""
    patches, targets = [], []
    for i in indices:
        values = clips[i]
        count = values.shape[2] // patch_frames
        if count == 0:
            raise DataError(f"clip {i} has {values.shape[2]} frames, fewer than one patch ({patch_frames})")
        for p in range(count):
            patches.append(values[:, :, p * patch_frames:(p + 1) * patch_frames])
        one_hot = np.zeros((count, N_CLASSES), dtype=np.float32)
        one_hot[:, labels[i]] = 1.0
        targets.append(one_hot)
    return np.stack(patches).astype(np.float32), np.concatenate(targets)


# ==================== TRAINING ====================

def fold_streams(seed: int, stream_index: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    """(init seed, shuffle generator, mixup generator) derived from the master seed and fold."""
    init, shuffle, mixup = np.random.SeedSequence([seed, stream_index]).spawn(3)
    return int(init.generate_state(1)[0]), np.random.default_rng(shuffle), np.random.default_rng(mixup)


def train_model(
    manifest: Manifest,
    clips: Sequence[np.ndarray],
    train_idx: Sequence[int],
    val_idx: Sequence[int],
    config: TrainConfig,
    stream_index: int,
    label: str = "fold"
) -> tuple[ModelState, FoldRecord]:
    """
    Train one model on `train_idx`, validating clip-level accuracy on `val_idx` after every epoch.

    Normalization statistics come from the training patches only and are
    stored in the returned state. The final-epoch model is returned.
    """
    started = time.perf_counter()
    labels = manifest.labels
    patch_frames = config.feature.patch_frames

    raw, targets = build_patches(clips, train_idx, labels, patch_frames)
    norm_stats = compute_norm_stats(raw)
    x_train = select_channels(normalize_array(raw, norm_stats), config.channel_mode)
    n = len(x_train)
    if n < MIN_BATCH:
        raise DataError(f"{label}: {n} training patch(es); need at least {MIN_BATCH}")

    init_seed, shuffle_rng, mixup_rng = fold_streams(config.seed, stream_index)
    state = build_network(config.network_spec(), seed=init_seed)
    state.norm_stats = norm_stats
    state.feature_config = config.feature
    state.channel_mode = str(config.channel_mode)

    val_manifest = manifest.subset(val_idx)
    val_clips = [clips[i] for i in val_idx]
    record = FoldRecord(
        fold_index=stream_index,
        n_train_clips=len(train_idx),
        n_validation_clips=len(val_idx),
        n_train_patches=n,
    )
    batch_size = min(config.batch_size, n)
    mixing = not config.mixup.is_identity
    logger.info(
        f"{label}: {len(train_idx)} training clips ({n} patches), {len(val_idx)} validation clips, "
        f"{config.network} {config.channel_mode}, mixup {config.mixup.ratio_key}"
    )

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        losses, correct, seen = [], 0, 0
        for batch_no, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            if len(idx) < MIN_BATCH:
                break
            xb, yb = x_train[idx], targets[idx]
            if mixing:
                xb, yb = mixup_arrays(xb, yb, config.mixup, mixup_rng)
            try:
                state, loss, probs = train_step(state, xb, yb, config.optimizer, epoch)
            except NumericError as e:
                logger.error(f"{label}: numeric failure at epoch {epoch + 1}, batch {batch_no}")
                raise NumericError(f"{label}, epoch {epoch + 1}, batch {batch_no}: {e}") from e
            losses.append(loss)
            correct += int(np.sum(np.argmax(probs, axis=1) == np.argmax(yb, axis=1)))
            seen += len(idx)
            logger.debug(f"{label} epoch {epoch + 1} batch {batch_no}: loss {loss:.6f}")
        if seen == 0:
            raise DataError(f"{label}: no batch of at least {MIN_BATCH} patches (batch_size {config.batch_size})")

        report, _ = score_clip_arrays(state, val_clips, val_manifest, config.strategy) if val_idx else (None, None)
        epoch_record = EpochRecord(
            epoch=epoch + 1,
            loss=float(np.mean(losses)),
            train_accuracy=correct / seen,
            validation_accuracy=report.overall_accuracy if report else 0.0,
            learning_rate=config.optimizer.learning_rate_at(epoch),
        )
        record.epochs.append(epoch_record)
        logger.info(
            f"{label} epoch {epoch_record.epoch}/{config.epochs}: loss {epoch_record.loss:.4f}, "
            f"train acc {epoch_record.train_accuracy:.3f}, val acc {epoch_record.validation_accuracy:.3f}"
        )

    state.velocity = []
    record.validation_accuracy = record.epochs[-1].validation_accuracy
    record.wall_clock_s = time.perf_counter() - started
    return state, record


def train_fold(
    manifest: Manifest,
    plan: FoldPlan,
    fold_index: int,
    config: TrainConfig,
    clips: Optional[Sequence[np.ndarray]] = None,
    cache: Optional[FeatureCache] = None
) -> tuple[ModelState, FoldRecord]:
    """Train on every fold except `fold_index` and validate on it (k=1: train and validate on the one fold)."""
    train_idx = plan.train_indices(fold_index)
    val_idx = plan.validation_indices(fold_index)
    if clips is None:
        clips = load_clip_features(manifest, config, cache)
    return train_model(manifest, clips, train_idx, val_idx, config, fold_index, label=f"fold {fold_index}")


def _train_fold_job(args) -> tuple[ModelState, FoldRecord]:
    manifest, plan, fold_index, config, clips = args
    return train_fold(manifest, plan, fold_index, config, clips=clips)


def resolve_fold_plan(manifest: Manifest, config: TrainConfig, fold_plan: Optional[Path] = None) -> FoldPlan:
    """Explicit plan file/directory, then config.folds (path or k)."""
    if fold_plan is not None:
        return load_fold_plan(Path(fold_plan), manifest)
    if isinstance(config.folds, str):
        return load_fold_plan(Path(config.folds), manifest)
    return make_folds(manifest, int(config.folds), config.seed)


def run_cross_validation(
    manifest: Manifest,
    config: TrainConfig,
    plan: Optional[FoldPlan] = None,
    out_dir: Optional[Path] = None,
    name: Optional[str] = None,
    workers: int = 1,
    cache: Optional[FeatureCache] = None,
    eval_manifest: Optional[Manifest] = None,
    train_on_all_folds: bool = False,
    records_path: Optional[Path] = None
) -> RunRecord:
    """
    Train every fold, average the fold accuracies and optionally score a held-out manifest.

    Args:
        manifest: Development clips
        config: Training configuration
        plan: Fold plan (default: resolved from config.folds)
        out_dir: Receives config.json, fold<i>.ckpt, all.ckpt and records.jsonl
        name: Run label used in comparison tables
        workers: Folds train in that many processes; extraction uses as many threads
        cache: Feature cache
        eval_manifest: Held-out clips scored after cross-validation
        train_on_all_folds: Evaluation model is one model trained on every
            development clip instead of the fold-model ensemble
        records_path: Records file (default: out_dir/records.jsonl)

    Returns:
        The run record (also appended to the records file when there is one)
    """
    started = time.perf_counter()
    plan = plan or resolve_fold_plan(manifest, config)
    plan.check_partition(len(manifest))
    if plan.degenerate:
        logger.warning("k=1: validating on the training clips (smoke-test plan)")

    out_dir = Path(out_dir) if out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_train_config(config, out_dir / "config.json")

    clips = load_clip_features(manifest, config, cache, workers)

    jobs = [(manifest, plan, f, config, clips) for f in range(plan.k)]
    if workers > 1 and plan.k > 1:
        with ProcessPoolExecutor(max_workers=min(workers, plan.k)) as pool:
            results = list(pool.map(_train_fold_job, jobs))
    else:
        results = [_train_fold_job(job) for job in jobs]

    states = []
    fold_records = []
    for state, fold_record in results:
        if out_dir is not None:
            path = out_dir / f"fold{fold_record.fold_index}.ckpt"
            save_checkpoint(state, path)
            fold_record.checkpoint = str(path)
        states.append(state)
        fold_records.append(fold_record)

    record = RunRecord(
        name=name or f"{config.network}-{config.channel_mode}-mixup{config.mixup.ratio_key}",
        config=config.to_dict(),
        seed=config.seed,
        network=config.network,
        channel_mode=str(config.channel_mode),
        mixup=config.mixup.ratio_key,
        folds=fold_records,
        cv_mean=mean_accuracy([f.validation_accuracy for f in fold_records]),
        degenerate=plan.degenerate,
    )
    logger.info(f"Cross-validation: folds {[round(a, 4) for a in record.fold_accuracies]}, mean {record.cv_mean:.4f}")

    evaluation_states = states
    if train_on_all_folds:
        everything = list(range(len(manifest)))
        all_state, _ = train_model(manifest, clips, everything, [], config, plan.k, label="all folds")
        if out_dir is not None:
            save_checkpoint(all_state, out_dir / "all.ckpt")
        evaluation_states = [all_state]
    record.evaluation_model = "all-folds" if train_on_all_folds else "fold-ensemble"

    if eval_manifest is not None:
        report, _ = score_manifest(evaluation_states, eval_manifest, config.strategy, cache=cache, workers=workers)
        record.evaluation_accuracy = report.overall_accuracy
        record.generalization_gap = record.cv_mean - report.overall_accuracy
        logger.info(
            f"Evaluation ({record.evaluation_model}): {report.overall_accuracy:.4f}, "
            f"gap {record.generalization_gap:+.4f}"
        )

    record.wall_clock_s = time.perf_counter() - started
    if records_path is None and out_dir is not None:
        records_path = out_dir / "records.jsonl"
    if records_path is not None:
        append_record(record, records_path)
    return record


# ==================== COMPARISON ====================

@dataclass
class ComparisonRow:
    channel_mode: str
    network: str
    mixup: str
    cv_mean: float
    evaluation_accuracy: Optional[float]
    runs: int


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


def _mixup_sort_key(ratio: str) -> tuple:
    try:
        return (0, float(ratio), ratio)
    except ValueError:
        return (1, 0.0, ratio)  # beta(...) after the fixed ratios


def compare_runs(records: Sequence[RunRecord]) -> ComparisonReport:
    """
    One row per (channel_mode, network, mixup ratio); records sharing a key are averaged.

    Rows are ordered by channel mode, network, then ratio ascending.
    """
    if not records:
        raise DataError("no run records to compare")
    groups: dict[tuple, list[RunRecord]] = {}
    for record in records:
        groups.setdefault(record.key, []).append(record)

    rows = []
    for (channel_mode, network, mixup), members in groups.items():
        evaluated = [r.evaluation_accuracy for r in members if r.evaluation_accuracy is not None]
        rows.append(ComparisonRow(
            channel_mode=channel_mode,
            network=network,
            mixup=mixup,
            cv_mean=mean_accuracy([r.cv_mean for r in members]),
            evaluation_accuracy=mean_accuracy(evaluated) if evaluated else None,
            runs=len(members),
        ))
    rows.sort(key=lambda r: (r.channel_mode, r.network, _mixup_sort_key(r.mixup)))
    return ComparisonReport(rows=rows)


def format_comparison(report: ComparisonReport) -> str:
    header = f"{'channels':<14} {'network':<16} {'mixup':>10} {'dev (CV)':>9} {'eval':>8} {'runs':>5}"
    lines = [header, "-" * len(header)]
    for row in report.rows:
        evaluation = "-" if row.evaluation_accuracy is None else f"{row.evaluation_accuracy * 100:.2f}%"
        lines.append(
            f"{row.channel_mode:<14} {row.network:<16} {row.mixup:>10} "
            f"{row.cv_mean * 100:>8.2f}% {evaluation:>8} {row.runs:>5}"
        )
    return "\n".join(lines)
