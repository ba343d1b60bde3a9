"""``fusehar`` command-line entry point.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 training
divergence, 1 anything else. Failures print the stage name.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import augment, imaging, stages
from .classify import ALIGN_POLICIES, HEADS, ClassifierError, load_linear_model
from .dataset import DataError, SynthConfig, synth_generate
from .evaluation import EvaluationError
from .nn import TABLE_I, TABLE_II, TrainConfig, TrainingDivergedError
from .pipeline import MODALITIES, ConfigError, PipelineConfig, RunError
from .report import FORMATS, ReportError
from .tensor import ShapeError, TensorFormatError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

def _json_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read JSON config {path}: {exc}") from None


def _train_config(args, base: TrainConfig) -> TrainConfig:
    cfg = TrainConfig.from_json(_json_file(args.config), base) if args.config else base
    overrides = {k: v for k, v in (("max_epochs", args.epochs), ("seed", args.seed)) if v is not None}
    return replace(cfg, **overrides)


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    overrides = {}
    for name in ("seed", "head", "modality", "runs"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return replace(cfg, **overrides) if overrides else cfg


def _synth_config(args) -> SynthConfig:
    doc = _json_file(args.config) if args.config else {}
    for name in ("num_classes", "trials_per_class", "frames", "height", "width",
                 "inertial_len", "noise_level"):
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    try:
        return SynthConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def cmd_synth(args):
    cfg = _synth_config(args)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    manifest = synth_generate(cfg, args.seed, args.out)
    print(f"wrote {len(manifest.trials)} trials to {args.out}")


def cmd_make_sfi(args):
    doc = stages.make_sfi(args.manifest, args.out, args.epsilon, args.size)
    print(f"wrote {len(doc['images'])} SFIs to {args.out}")


def cmd_make_signal_images(args):
    doc = stages.make_signal_images(args.manifest, args.out)
    print(f"wrote {len(doc['images'])} signal images to {args.out}")


def cmd_augment(args):
    doc = stages.augment_images(args.images, args.out, args.seed, args.factor, args.variance)
    print(f"wrote {len(doc['images'])} augmented images to {args.out}")


def cmd_split(args):
    split = stages.make_split(args.manifest, args.out, args.fraction, args.seed)
    print(f"{len(split.train_indices)} train / {len(split.test_indices)} test trials")


def cmd_train_depth(args):
    _, history = stages.train_depth(args.images, args.split, args.out,
                                    _train_config(args, TABLE_I), args.feature_width)
    print(f"final epoch: loss {history[-1].loss:.4f}, train accuracy {history[-1].accuracy:.3f}"
          if history else "no epochs run")


def cmd_train_inertial(args):
    _, history = stages.train_inertial(args.images, args.split, args.out,
                                       _train_config(args, TABLE_II), args.feature_width)
    print(f"final epoch: loss {history[-1].loss:.4f}, train accuracy {history[-1].accuracy:.3f}"
          if history else "no epochs run")


def cmd_extract(args):
    doc = stages.extract(args.model, args.images, args.out)
    print(f"wrote {len(doc['features'])} feature vectors of width {doc['width']} to {args.out}")


def _head_pipeline_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.load(args.config)
    else:
        cfg = PipelineConfig(manifest="")
    return replace(cfg, head=args.head, modality=args.modality, fusion_policy=args.policy,
                   tune_c=args.tune_c or cfg.tune_c)


def cmd_fit_classifier(args):
    cfg = _head_pipeline_config(args)
    stages.fit_classifier(args.depth_features, args.inertial_features, args.split, args.out,
                          cfg, args.seed)
    print(f"wrote {cfg.head} classifier on {cfg.modality} features to {args.out}")


def cmd_evaluate(args):
    metrics = stages.evaluate_classifier(args.classifier, args.depth_features,
                                         args.inertial_features, args.split)
    _, meta = load_linear_model(args.classifier)
    stages.write_reports(metrics, args.out, "metrics", args.formats.split(","),
                         stages.report_title(meta.get("head", ""), meta.get("modality", "")))
    print(f"overall accuracy {metrics.overall_accuracy:.4f} on {metrics.num_test} test trials")


def cmd_repeat(args):
    cfg = _pipeline_config(args)
    summaries = stages.repeat(cfg, args.out, cfg.runs, args.base_seed)
    for name, s in summaries.items():
        print(f"{name:9s} mean {s.mean:.4f}  std {s.std:.4f}  over {len(s.seeds)} runs")


def cmd_run_all(args):
    cfg = _pipeline_config(args)
    results = stages.run_all(cfg, args.out)
    for name, m in results.items():
        print(f"{name:9s} accuracy {m.overall_accuracy:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusehar", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS worker threads (default 1, keeps results bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth", help="generate a synthetic two-modality dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--config", help="JSON with SynthConfig fields")
    for name, kind in (("num-classes", int), ("trials-per-class", int), ("frames", int),
                       ("height", int), ("width", int), ("inertial-len", int),
                       ("noise-level", float)):
        s.add_argument(f"--{name}", type=kind)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("make-sfi", help="depth sequences -> sequential front-view images")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epsilon", type=float, default=imaging.DEFAULT_SFI_EPSILON)
    s.add_argument("--size", type=int, default=64, help="output side length (bicubic resize)")
    s.set_defaults(func=cmd_make_sfi)

    s = sub.add_parser("make-signal-images", help="inertial sequences -> 24x52 signal images")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_signal_images)

    s = sub.add_parser("augment", help="flip/rotate/noise expansion of an image set")
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--factor", type=int, default=augment.AUGMENT_FACTOR)
    s.add_argument("--variance", type=float, default=augment.DEFAULT_NOISE_VARIANCE)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("split", help="random train/test split of a manifest's trials")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    for name, func, table in (("train-depth", cmd_train_depth, "I"),
                              ("train-inertial", cmd_train_inertial, "II")):
        s = sub.add_parser(name, help=f"train a CNN branch (defaults: TABLE_{table})")
        s.add_argument("--images", required=True)
        s.add_argument("--split", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--config", help="JSON with TrainConfig fields")
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--feature-width", type=int, default=500)
        s.set_defaults(func=func)

    s = sub.add_parser("extract", help="dump penultimate-layer features")
    s.add_argument("--model", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fit-classifier", help="fit an SVM or softmax head")
    s.add_argument("--head", choices=HEADS, default="svm")
    s.add_argument("--modality", choices=MODALITIES, default="fused")
    s.add_argument("--policy", choices=ALIGN_POLICIES, default="final")
    s.add_argument("--depth-features")
    s.add_argument("--inertial-features")
    s.add_argument("--split", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="pipeline JSON supplying svm/softmax settings")
    s.add_argument("--tune-c", action="store_true", help="grid-search the SVM c on a hold-out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fit_classifier)

    s = sub.add_parser("evaluate", help="test-set metrics for a fitted head")
    s.add_argument("--classifier", required=True)
    s.add_argument("--depth-features")
    s.add_argument("--inertial-features")
    s.add_argument("--split", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--formats", default="json,csv,svg")
    s.set_defaults(func=cmd_evaluate)

    for name, func in (("repeat", cmd_repeat), ("run-all", cmd_run_all)):
        s = sub.add_parser(name, help="repeated random-split protocol" if name == "repeat"
                           else "every stage end to end")
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--head", choices=HEADS)
        s.add_argument("--modality", choices=MODALITIES)
        if name == "repeat":
            s.add_argument("--runs", type=int)
            s.add_argument("--base-seed", type=int)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and not set(args.formats.split(",")) <= set(FORMATS):
        print(f"fusehar: unknown format in --formats {args.formats!r}", file=sys.stderr)
        return EXIT_USAGE
    stage = args.command
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            args.func(args)
    except RunError as exc:
        stage = f"{args.command}/{exc.stage} (run {exc.run_index})"
        return _fail(stage, exc.cause)
    except Exception as exc:  # mapped to an exit code below
        return _fail(stage, exc)
    return EXIT_OK


def _fail(stage, exc) -> int:
    print(f"fusehar: stage {stage} failed: {exc}", file=sys.stderr)
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, TrainingDivergedError):
        return EXIT_DIVERGED
    if isinstance(exc, (DataError, TensorFormatError, ShapeError, ClassifierError,
                        EvaluationError, ReportError, FileNotFoundError, KeyError)):
        return EXIT_DATA
    return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
