#!/usr/bin/env python3
"""
SceneMix - acoustic scene classification toolkit
Command-line entry point
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .audio_io import N_CLASSES, read_wav, scene_by_id
from .augment import LabeledExample, mixup_pair
from .config import TrainConfig, load_train_config
from .dataset import load_manifest, make_folds, synthesize_corpus, write_fold_plan
from .errors import SceneMixError, UsageError
from .evaluation import (
    AggregationStrategy,
    check_models,
    format_report,
    predict_clip,
    prediction_to_dict,
    report_to_dict,
    score_manifest,
    write_predictions,
)
from .feature_cache import FeatureCache, default_cache_dir
from .features import extract_patches
from .logger import logger, set_console_level
from .nn.checkpoint import load_checkpoint
from .pipeline import (
    compare_runs,
    format_comparison,
    load_clip_features,
    load_records,
    resolve_fold_plan,
    run_cross_validation,
)
from .preview import render_mixup, render_patch

PREVIEW_ALPHA = 0.2


class ArgumentParser(argparse.ArgumentParser):
    """Reports bad flags as UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _emit(args, text: str, data: dict) -> None:
    if args.format == "json":
        print(json.dumps(data, indent=2, ensure_ascii=False))
    else:
        print(text)


def _positive(flag: str, value, minimum=1) -> None:
    if value < minimum:
        raise UsageError(f"{flag} must be >= {minimum}, got {value}")


def _cache_dir(args) -> Optional[Path]:
    return Path(args.cache) if getattr(args, "cache", None) else default_cache_dir()


# ==================== COMMANDS ====================

def cmd_synth_data(args) -> int:
    _positive("--clips-per-class", args.clips_per_class)
    _positive("--clips-per-location", args.clips_per_location)
    _positive("--sample-rate", args.sample_rate)
    if args.duration <= 0:
        raise UsageError(f"--duration must be positive, got {args.duration}")

    manifest = synthesize_corpus(
        Path(args.out),
        clips_per_class=args.clips_per_class,
        duration_s=args.duration,
        seed=args.seed,
        clips_per_location=args.clips_per_location,
        sample_rate=args.sample_rate,
        bit_depth=args.bit_depth,
    )
    manifest_path = Path(args.out) / "manifest.tsv"
    _emit(
        args,
        f"Wrote {len(manifest)} clips to {args.out}\nManifest: {manifest_path}",
        {"clips": len(manifest), "manifest": str(manifest_path), "locations": len(set(manifest.locations))},
    )
    return 0


def cmd_extract(args) -> int:
    config = load_train_config(Path(args.config))
    cache_dir = _cache_dir(args)
    if cache_dir is None:
        raise UsageError("--cache is required (or set SCENEMIX_CACHE_DIR)")
    manifest = load_manifest(Path(args.manifest))
    cache = FeatureCache(cache_dir, config.feature)
    clips = load_clip_features(manifest, config, cache, workers=args.workers)

    previews = 0
    if args.preview:
        preview_dir = Path(args.preview)
        first_of_class = {}
        for entry, values in zip(manifest, clips):
            patch = extract_patches(list(values), config.feature.patch_frames, source=str(entry.path))[0]
            render_patch(patch.values, preview_dir / f"{entry.path.stem}.png")
            previews += 1
            first_of_class.setdefault(entry.scene.id, (entry, patch))
        if len(first_of_class) >= 2:
            (entry_a, patch_a), (entry_b, patch_b) = [first_of_class[k] for k in sorted(first_of_class)[:2]]
            a = LabeledExample(patch_a, np.eye(N_CLASSES)[entry_a.scene.id])
            b = LabeledExample(patch_b, np.eye(N_CLASSES)[entry_b.scene.id])
            mixed = mixup_pair(a, b, PREVIEW_ALPHA)
            render_mixup(a.features.values, b.features.values, mixed.features.values, preview_dir / "mixup.png")
            previews += 1

    _emit(
        args,
        f"Cached features for {len(clips)} clips in {cache_dir} ({cache.hits} hits, {cache.misses} computed)"
        + (f"\nWrote {previews} previews to {args.preview}" if args.preview else ""),
        {"clips": len(clips), "cache": str(cache_dir), "hits": cache.hits, "misses": cache.misses,
         "fingerprint": cache.fingerprint, "previews": previews},
    )
    return 0


def cmd_train(args) -> int:
    config = load_train_config(Path(args.config))
    manifest = load_manifest(Path(args.manifest))
    eval_manifest = load_manifest(Path(args.eval_manifest)) if args.eval_manifest else None
    plan = resolve_fold_plan(manifest, config, Path(args.fold_plan) if args.fold_plan else None)
    cache_dir = _cache_dir(args) or (Path(config.cache_dir) if config.cache_dir else None)
    cache = FeatureCache(cache_dir, config.feature) if cache_dir else None

    record = run_cross_validation(
        manifest,
        config,
        plan=plan,
        out_dir=Path(args.out),
        name=args.name,
        workers=args.workers,
        cache=cache,
        eval_manifest=eval_manifest,
        train_on_all_folds=args.train_on_all_folds,
        records_path=Path(args.records) if args.records else None,
    )

    lines = [f"Run: {record.name}"]
    for fold in record.folds:
        lines.append(f"  fold {fold.fold_index}: {fold.validation_accuracy * 100:.2f}%")
    lines.append(f"Cross-validation mean: {record.cv_mean * 100:.2f}%")
    if record.evaluation_accuracy is not None:
        lines.append(f"Evaluation ({record.evaluation_model}): {record.evaluation_accuracy * 100:.2f}%")
        lines.append(f"Generalization gap: {record.generalization_gap * 100:+.2f} points")
    _emit(args, "\n".join(lines), record.to_dict())
    return 0


def _load_models(paths: Sequence[str]):
    return [load_checkpoint(Path(p)) for p in paths]


def cmd_evaluate(args) -> int:
    states = _load_models(args.checkpoint)
    feature_config = None
    strategy = args.strategy
    if args.config:
        config: TrainConfig = load_train_config(Path(args.config))
        feature_config = config.feature
        strategy = strategy or config.strategy.value
    feature_config = check_models(states, feature_config)
    manifest = load_manifest(Path(args.manifest))
    cache_dir = _cache_dir(args)
    cache = FeatureCache(cache_dir, feature_config) if cache_dir else None

    report, predictions = score_manifest(
        states, manifest, strategy or AggregationStrategy.MAX, cache=cache, workers=args.workers
    )
    if args.predictions:
        write_predictions(predictions, Path(args.predictions))
    _emit(args, format_report(report), report_to_dict(report))
    return 0


def cmd_predict(args) -> int:
    states = _load_models(args.checkpoint)
    clip = read_wav(Path(args.wav))
    prediction = predict_clip(states, clip, args.strategy, source=str(args.wav))
    top = np.argsort(-prediction.scores, kind="stable")[:3]
    lines = [f"{prediction.aggregated_label.name}"] + [
        f"  {scene_by_id(int(i)).name:<18} {prediction.scores[i]:.4f}" for i in top
    ]
    _emit(args, "\n".join(lines), prediction_to_dict(prediction))
    return 0


def cmd_compare(args) -> int:
    report = compare_runs(load_records([Path(p) for p in args.records]))
    _emit(args, format_comparison(report), report.to_dict())
    return 0


def cmd_folds(args) -> int:
    _positive("--k", args.k)
    manifest = load_manifest(Path(args.manifest))
    plan = make_folds(manifest, args.k, args.seed)
    write_fold_plan(plan, manifest, Path(args.out))
    sizes = [len(f) for f in plan.folds]
    _emit(
        args,
        f"Wrote {plan.k}-fold plan to {args.out} (fold sizes {sizes})",
        {"k": plan.k, "fold_sizes": sizes, "out": str(args.out)},
    )
    return 0


# ==================== PARSER ====================

def build_parser() -> ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = ArgumentParser(
        prog="scenemix",
        description="Multi-channel log-mel CNN toolkit for acoustic scene classification",
        formatter_class=formatter,
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker processes/threads for folds and feature extraction")
    parser.add_argument("--format", choices=("text", "json"), default="text", help="output format")
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")

    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=ArgumentParser)

    def add(name: str, help_text: str, handler):
        sub = commands.add_parser(name, help=help_text, description=help_text, formatter_class=formatter,
                                  allow_abbrev=False)
        sub.set_defaults(handler=handler)
        return sub

    sub = add("synth-data", "synthesize a labeled stereo scene corpus", cmd_synth_data)
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--clips-per-class", type=int, default=8, help="clips per scene class")
    sub.add_argument("--duration", type=float, default=30.0, help="clip length in seconds")
    sub.add_argument("--seed", type=int, default=0, help="corpus seed")
    sub.add_argument("--clips-per-location", type=int, default=4, help="clips sharing one location id")
    sub.add_argument("--sample-rate", type=int, default=44100, help="sample rate in Hz")
    sub.add_argument("--bit-depth", type=int, choices=(16, 24), default=16, help="PCM bit depth")

    sub = add("extract", "compute and cache log-mel features", cmd_extract)
    sub.add_argument("--manifest", required=True, help="clip manifest")
    sub.add_argument("--config", required=True, help="training config (JSON)")
    sub.add_argument("--cache", default=None, help="feature cache directory (default: $SCENEMIX_CACHE_DIR)")
    sub.add_argument("--preview", default=None, help="also write spectrogram PNGs to this directory")

    sub = add("train", "k-fold cross-validation training", cmd_train)
    sub.add_argument("--manifest", required=True, help="development clip manifest")
    sub.add_argument("--config", required=True, help="training config (JSON)")
    sub.add_argument("--out", required=True, help="run directory for checkpoints and records")
    sub.add_argument("--fold-plan", default=None, help="fold-plan file or DCASE evaluation-setup directory")
    sub.add_argument("--train-on-all-folds", action="store_true",
                     help="evaluation model trained on all development clips instead of the fold ensemble")
    sub.add_argument("--records", default=None, help="records file to append to (default: OUT/records.jsonl)")
    sub.add_argument("--eval-manifest", default=None, help="held-out manifest scored after training")
    sub.add_argument("--cache", default=None, help="feature cache directory")
    sub.add_argument("--name", default=None, help="run label for comparison tables")

    strategies = [s.value for s in AggregationStrategy]
    sub = add("evaluate", "score a manifest with one checkpoint or an ensemble", cmd_evaluate)
    sub.add_argument("--manifest", required=True, help="clip manifest")
    sub.add_argument("--checkpoint", required=True, action="append", help="checkpoint (repeat for an ensemble)")
    sub.add_argument("--strategy", choices=strategies, default=None,
                     help="patch aggregation (default: the config's, else max)")
    sub.add_argument("--config", default=None, help="training config whose feature settings must match")
    sub.add_argument("--predictions", default=None, help="write per-clip predictions (TSV)")
    sub.add_argument("--cache", default=None, help="feature cache directory")

    sub = add("predict", "classify one WAV file", cmd_predict)
    sub.add_argument("--wav", required=True, help="WAV file")
    sub.add_argument("--checkpoint", required=True, action="append", help="checkpoint (repeat for an ensemble)")
    sub.add_argument("--strategy", choices=strategies, default="max", help="patch aggregation")

    sub = add("compare", "tabulate run records", cmd_compare)
    sub.add_argument("--records", required=True, nargs="+", help="records files (JSON lines)")

    sub = add("folds", "write a location-grouped fold plan", cmd_folds)
    sub.add_argument("--manifest", required=True, help="clip manifest")
    sub.add_argument("--k", type=int, default=4, help="number of folds")
    sub.add_argument("--seed", type=int, default=0, help="shuffle seed")
    sub.add_argument("--out", required=True, help="fold-plan file to write")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code (0 ok, 1 usage, 2 data, 3 numeric)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            set_console_level(logging.DEBUG)
        _positive("--workers", args.workers)
        logger.debug(f"scenemix {__version__}: {args.command}")
        return args.handler(args)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except SceneMixError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
