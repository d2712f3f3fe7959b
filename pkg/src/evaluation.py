"""
Clip-level prediction, metrics and scoring for SceneMix

Networks classify fixed-width patches; a clip's label combines the patch
probability vectors with one of the aggregation strategies below. Every
argmax and vote tie goes to the lowest class id.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .audio_io import N_CLASSES, SCENE_CLASSES, AudioClip, SceneClass, read_wav, scene_by_id
from .dataset import Manifest
from .errors import ConfigError, DataError, FingerprintMismatchError
from .feature_cache import FeatureCache
from .features import ChannelMode, FeatureConfig, clip_log_mel, extract_patches, mel_filterbank, normalize_array, select_channels
from .fileio import atomic_write
from .logger import logger
from .nn.network import ModelState, predict_proba

SIMPLEX_TOLERANCE = 1e-6

Models = Union[ModelState, Sequence[ModelState]]


class AggregationStrategy(Enum):
    MAX = "max"  # per-class maximum over patches, then argmax
    MEAN = "mean"
    MEDIAN = "median"
    MAJORITY = "majority"  # per-patch argmax votes
    MAX_PATCH_ARGMAX = "max-patch-argmax"  # the single most confident patch decides

    @classmethod
    def parse(cls, value: Union[str, "AggregationStrategy"]) -> "AggregationStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown aggregation strategy {value!r} (choose from {choices})") from None


DEFAULT_STRATEGY = AggregationStrategy.MAX


@dataclass
class ClipPrediction:
    clip_path: str
    patch_probabilities: np.ndarray  # [patches][n_classes]
    aggregated_label: SceneClass
    strategy: AggregationStrategy
    scores: np.ndarray  # aggregated score vector
    true_label: Optional[SceneClass] = None

    def __post_init__(self):
        probs = np.asarray(self.patch_probabilities, dtype=np.float64)
        if probs.ndim != 2 or len(probs) == 0:
            raise DataError(f"{self.clip_path}: need at least one patch probability vector")
        if np.any(probs < -SIMPLEX_TOLERANCE) or np.any(np.abs(probs.sum(axis=1) - 1.0) > SIMPLEX_TOLERANCE):
            raise DataError(f"{self.clip_path}: patch probabilities are not on the simplex")
        self.patch_probabilities = probs

    @property
    def correct(self) -> Optional[bool]:
        if self.true_label is None:
            return None
        return self.true_label.id == self.aggregated_label.id


@dataclass
class MetricsReport:
    overall_accuracy: float
    per_class_accuracy: np.ndarray  # NaN for classes without clips
    confusion: np.ndarray  # rows: true class, columns: predicted class
    strategy: str = DEFAULT_STRATEGY.value
    extra: dict = field(default_factory=dict)

    @property
    def n_clips(self) -> int:
        return int(self.confusion.sum())

    @property
    def class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)


# ==================== AGGREGATION ====================

def aggregate_clip(
    patch_probs: Union[np.ndarray, Sequence[np.ndarray]],
    strategy: Union[str, AggregationStrategy] = DEFAULT_STRATEGY
) -> tuple[SceneClass, np.ndarray]:
    """
    Combine per-patch probability vectors into one label and score vector.

    Args:
        patch_probs: [patches][n_classes] probabilities (at least one patch)
        strategy: aggregation rule

    Returns:
        (scene class, aggregated score vector)
    """
    strategy = AggregationStrategy.parse(strategy)
    probs = np.asarray(patch_probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None, :]
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise DataError("cannot aggregate an empty list of patch probabilities")

    if strategy == AggregationStrategy.MAX:
        scores = probs.max(axis=0)
    elif strategy == AggregationStrategy.MEAN:
        scores = probs.mean(axis=0)
    elif strategy == AggregationStrategy.MEDIAN:
        scores = np.median(probs, axis=0)
    elif strategy == AggregationStrategy.MAJORITY:
        votes = np.bincount(np.argmax(probs, axis=1), minlength=probs.shape[1])
        scores = votes / probs.shape[0]
    else:
        # Winning patch: highest single probability; among equal maxima the lowest class, then the first patch
        top = probs.max()
        class_id = int(np.argmax(probs.max(axis=0) == top))
        patch = int(np.argmax(probs[:, class_id] == top))
        scores = probs[patch].copy()
        return scene_by_id(class_id), scores

    return scene_by_id(int(np.argmax(scores))), scores


# ==================== METRICS ====================

def compute_metrics(
    true_ids: Sequence[int],
    predicted_ids: Sequence[int],
    strategy: Union[str, AggregationStrategy] = DEFAULT_STRATEGY,
    n_classes: int = N_CLASSES
) -> MetricsReport:
    true_ids = np.asarray(true_ids, dtype=np.int64)
    predicted_ids = np.asarray(predicted_ids, dtype=np.int64)
    if true_ids.shape != predicted_ids.shape:
        raise DataError(f"{len(true_ids)} true labels but {len(predicted_ids)} predictions")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true_ids, predicted_ids), 1)

    totals = confusion.sum(axis=1)
    diagonal = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, diagonal / np.maximum(totals, 1), np.nan)
    overall = float(diagonal.sum() / totals.sum()) if totals.sum() else 0.0

    return MetricsReport(
        overall_accuracy=overall,
        per_class_accuracy=per_class,
        confusion=confusion,
        strategy=AggregationStrategy.parse(strategy).value,
    )


# ==================== MODEL APPLICATION ====================

def _as_list(models: Models) -> list[ModelState]:
    states = [models] if isinstance(models, ModelState) else list(models)
    if not states:
        raise ConfigError("no model given")
    return states


def check_models(models: Models, feature_config: Optional[FeatureConfig] = None) -> FeatureConfig:
    """
    Feature config shared by every model; refuses mismatched fingerprints.

    Returns:
        The FeatureConfig the models were trained with
    """
    states = _as_list(models)
    reference = states[0]
    if reference.feature_config is None:
        raise DataError("model has no feature config; it cannot score audio")
    for other in states[1:]:
        if other.fingerprint != reference.fingerprint:
            raise FingerprintMismatchError("network spec", reference.fingerprint, other.fingerprint)
        if other.feature_fingerprint != reference.feature_fingerprint:
            raise FingerprintMismatchError("feature config", reference.feature_fingerprint, other.feature_fingerprint)
        if other.channel_mode != reference.channel_mode:
            raise DataError(f"ensemble mixes channel modes {reference.channel_mode} and {other.channel_mode}")
    if feature_config is not None and feature_config.fingerprint() != reference.feature_fingerprint:
        raise FingerprintMismatchError("feature config", reference.feature_fingerprint, feature_config.fingerprint())
    return reference.feature_config


def patch_probabilities(models: Models, patches: np.ndarray) -> np.ndarray:
    """
    Eval-mode probabilities for raw (unnormalized, 3-channel) patches.

    Each model normalizes with its own statistics and selects its channels;
    an ensemble averages the models' probabilities.
    """
    states = _as_list(models)
    total = None
    for state in states:
        values = patches
        if state.norm_stats is not None:
            values = normalize_array(values, state.norm_stats)
        values = select_channels(values, ChannelMode.parse(state.channel_mode))
        probs = predict_proba(state, values).astype(np.float64)
        total = probs if total is None else total + probs
    return total / len(states)


def predict_clip(
    models: Models,
    clip: AudioClip,
    strategy: Union[str, AggregationStrategy] = DEFAULT_STRATEGY,
    source: Optional[str] = None,
    true_label: Optional[SceneClass] = None
) -> ClipPrediction:
    """Patches, per-patch probabilities and the aggregated label for one clip."""
    config = check_models(models)
    values = clip_log_mel(clip, config, mel_filterbank(config), source=source)
    return _predict_values(models, values, config, strategy, source or "clip", true_label)


def _predict_values(models, values, config, strategy, source, true_label) -> ClipPrediction:
    patches = np.stack([p.values for p in extract_patches(list(values), config.patch_frames, source=source)])
    probs = patch_probabilities(models, patches)
    label, scores = aggregate_clip(probs, strategy)
    return ClipPrediction(
        clip_path=source,
        patch_probabilities=probs,
        aggregated_label=label,
        strategy=AggregationStrategy.parse(strategy),
        scores=scores,
        true_label=true_label,
    )


def score_manifest(
    models: Models,
    manifest: Manifest,
    strategy: Union[str, AggregationStrategy] = DEFAULT_STRATEGY,
    feature_config: Optional[FeatureConfig] = None,
    cache: Optional[FeatureCache] = None,
    workers: int = 1
) -> tuple[MetricsReport, list[ClipPrediction]]:
    """
    Score every clip of a manifest and compute clip-level metrics.

    Feature extraction runs on up to `workers` threads; results are consumed
    in manifest order so the report is identical for any worker count.

    Raises:
        FingerprintMismatchError: models and feature_config disagree
    """
    config = check_models(models, feature_config)
    strategy = AggregationStrategy.parse(strategy)
    if cache is not None and cache.fingerprint != config.fingerprint():
        raise FingerprintMismatchError("feature cache", config.fingerprint(), cache.fingerprint)
    filterbank = mel_filterbank(config)

    def load(entry):
        if cache is not None:
            return cache.load(entry.path)
        return clip_log_mel(read_wav(entry.path), config, filterbank, source=str(entry.path))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        clips = list(pool.map(load, manifest))

    report, predictions = score_clip_arrays(models, clips, manifest, strategy)
    logger.info(f"Scored {report.n_clips} clips ({strategy.value}): accuracy {report.overall_accuracy:.4f}")
    return report, predictions


def score_clip_arrays(
    models: Models,
    clips: Sequence[np.ndarray],
    manifest: Manifest,
    strategy: Union[str, AggregationStrategy] = DEFAULT_STRATEGY
) -> tuple[MetricsReport, list[ClipPrediction]]:
    """Score precomputed [3][n_mels][frames] log-mel matrices, one per manifest entry."""
    config = check_models(models)
    strategy = AggregationStrategy.parse(strategy)
    predictions = [
        _predict_values(models, values, config, strategy, str(entry.path), entry.scene)
        for entry, values in zip(manifest, clips)
    ]
    report = compute_metrics(
        [p.true_label.id for p in predictions],
        [p.aggregated_label.id for p in predictions],
        strategy,
    )
    return report, predictions


# ==================== OUTPUT ====================

def report_to_dict(report: MetricsReport) -> dict:
    return {
        "overall_accuracy": report.overall_accuracy,
        "n_clips": report.n_clips,
        "strategy": report.strategy,
        "per_class_accuracy": {
            scene.name: (None if np.isnan(acc) else float(acc))
            for scene, acc in zip(SCENE_CLASSES, report.per_class_accuracy)
        },
        "confusion": report.confusion.tolist(),
        **report.extra,
    }


def format_report(report: MetricsReport) -> str:
    """Human-readable accuracy table and confusion matrix."""
    width = max(len(s.name) for s in SCENE_CLASSES)
    lines = [
        f"Clips: {report.n_clips}   strategy: {report.strategy}",
        f"Overall accuracy: {report.overall_accuracy * 100:.2f}%",
        "",
        f"{'class':<{width}}  {'clips':>5}  {'accuracy':>8}",
        "-" * (width + 17),
    ]
    for scene, count, acc in zip(SCENE_CLASSES, report.class_counts, report.per_class_accuracy):
        shown = "-" if np.isnan(acc) else f"{acc * 100:.1f}%"
        lines.append(f"{scene.name:<{width}}  {int(count):>5}  {shown:>8}")

    lines += ["", "Confusion (rows: true, columns: predicted id)"]
    lines.append(" " * 4 + "".join(f"{i:>4}" for i in range(report.confusion.shape[1])))
    for i, row in enumerate(report.confusion):
        lines.append(f"{i:>4}" + "".join(f"{int(v):>4}" for v in row))
    return "\n".join(lines)


def write_predictions(predictions: Sequence[ClipPrediction], path: Path) -> None:
    """TSV: clip_path, true_class, predicted_class, strategy, then one score per class."""
    with atomic_write(Path(path), "w", encoding="utf-8") as f:
        header = ["clip_path", "true_class", "predicted_class", "strategy"] + [s.name for s in SCENE_CLASSES]
        f.write("\t".join(header) + "\n")
        for p in predictions:
            true_name = p.true_label.name if p.true_label else ""
            scores = "\t".join(f"{s:.6f}" for s in p.scores)
            f.write(f"{p.clip_path}\t{true_name}\t{p.aggregated_label.name}\t{p.strategy.value}\t{scores}\n")


def prediction_to_dict(prediction: ClipPrediction) -> dict:
    return {
        "clip_path": prediction.clip_path,
        "predicted_class": prediction.aggregated_label.name,
        "predicted_id": prediction.aggregated_label.id,
        "strategy": prediction.strategy.value,
        "scores": {s.name: float(v) for s, v in zip(SCENE_CLASSES, prediction.scores)},
        "patches": len(prediction.patch_probabilities),
    }
