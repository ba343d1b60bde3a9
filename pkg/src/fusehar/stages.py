"""File-backed pipeline stages behind the CLI subcommands.

Every stage reads its inputs from disk and writes ``.hart`` tensors plus a
JSON index, so stages can be run one by one or chained by ``run_all``. Image
and feature files are named ``<subject>_<action>_<trial>_<index>.hart``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment, imaging, tensor
from .classify import load_linear_model, pool_sfi_features, save_linear_model
from .dataset import (DataError, DatasetManifest, Split, load_manifest, split_train_test,
                      synth_generate, write_json)
from .evaluation import Metrics
from .nn import TrainConfig, build_depth_net, build_signal_net, load_network, save_network, train
from .pipeline import (MODALITIES, PipelineConfig, fit_classifier_head, modality_matrix,
                       repeat_ablation, sfi_stack)
from .report import emit_report

log = logging.getLogger(__name__)

IMAGE_INDEX = "images.json"
FEATURE_INDEX = "features.json"


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _index_path(path, default_name):
    path = Path(path)
    return path / default_name if path.is_dir() else path


def _entry_name(key, index) -> str:
    return "{}_{}_{}_{}.hart".format(*key, index)


def _key(entry) -> tuple:
    return (entry["subject_id"], entry["action_id"], entry["trial_id"])


# -- image sets ---------------------------------------------------------------

def _write_image_set(out_dir, kind, num_classes, items, extra=None) -> dict:
    """``items``: iterable of (key, index, array). Returns the written index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for key, index, arr in items:
        name = _entry_name(key, index)
        tensor.save(arr, out / name)
        entries.append({"path": name, "subject_id": key[0], "action_id": key[1],
                        "trial_id": key[2], "index": index})
    doc = {"kind": kind, "num_classes": num_classes, "images": entries, **(extra or {})}
    write_json(doc, out / IMAGE_INDEX)
    return doc


def load_image_set(path) -> tuple[dict, list[tuple[tuple, int, np.ndarray]]]:
    index = _index_path(path, IMAGE_INDEX)
    doc = _read_json(index)
    items = [(_key(e), e["index"], tensor.load(index.parent / e["path"])) for e in doc["images"]]
    return doc, items


def make_sfi(manifest_path, out_dir, epsilon=imaging.DEFAULT_SFI_EPSILON, size=64) -> dict:
    manifest = load_manifest(manifest_path)

    def items():
        for i, rec in enumerate(manifest.trials):
            depth, _ = manifest.load_trial(i)
            for t, img in enumerate(sfi_stack(depth, epsilon, size), start=1):
                yield rec.key, t, img

    return _write_image_set(out_dir, "sfi", manifest.num_classes, items(),
                            {"epsilon": epsilon, "size": size})


def make_signal_images(manifest_path, out_dir) -> dict:
    manifest = load_manifest(manifest_path)

    def items():
        for i, rec in enumerate(manifest.trials):
            _, inertial = manifest.load_trial(i)
            yield rec.key, 0, imaging.make_signal_image(inertial).pixels

    return _write_image_set(out_dir, "signal", manifest.num_classes, items())


def augment_images(images_path, out_dir, seed=0, factor=augment.AUGMENT_FACTOR,
                   variance=augment.DEFAULT_NOISE_VARIANCE) -> dict:
    doc, items = load_image_set(images_path)
    expanded = augment.augment_set([arr for _, _, arr in items], seed, factor, variance)

    def out_items():
        for i, (key, index, _) in enumerate(items):
            for v in range(factor):
                yield key, index * factor + v, expanded[i * factor + v]

    return _write_image_set(out_dir, doc["kind"] + "-augmented", doc["num_classes"], out_items(),
                            {"factor": factor, "variance": variance, "seed": seed,
                             "variants": list(augment.VARIANTS[:factor])})


# -- splits -------------------------------------------------------------------

def make_split(manifest_path, out_path, train_fraction=0.8, seed=0) -> Split:
    manifest = load_manifest(manifest_path)
    split = split_train_test(manifest, train_fraction, seed)
    doc = split.to_json()
    doc["train_fraction"] = train_fraction
    doc["train_keys"] = [list(manifest.trials[i].key) for i in split.train_indices]
    doc["test_keys"] = [list(manifest.trials[i].key) for i in split.test_indices]
    write_json(doc, out_path)
    return split


def load_split_keys(path, part: str) -> list[tuple]:
    if part not in ("train", "test"):
        raise ValueError(f"split part must be 'train' or 'test', got {part!r}")
    doc = _read_json(path)
    return [tuple(k) for k in doc[f"{part}_keys"]]


def _select(items, keys):
    keep = set(keys)
    return [it for it in items if it[0] in keep]


# -- branch training ------------------------------------------------------------

def _train_branch(kind, images_path, split_path, out_dir, cfg: TrainConfig, feature_width):
    doc, items = load_image_set(images_path)
    items = _select(items, load_split_keys(split_path, "train"))
    if not items:
        raise DataError("no training images left after applying the split")
    x = np.stack([arr for _, _, arr in items])
    y = np.array([key[1] for key, _, _ in items])
    num_classes = doc["num_classes"]
    if kind == "depth":
        net = build_depth_net(num_classes, x.shape[-1], feature_width)
    else:
        net = build_signal_net(num_classes, feature_width)
    history = train(net, x, y, cfg)
    meta = {"branch": kind, "num_classes": num_classes, "train_config": cfg.to_json(),
            "history": [vars(h) for h in history]}
    save_network(net, out_dir, meta)
    return net, history


def train_depth(images_path, split_path, out_dir, cfg: TrainConfig, feature_width=500):
    return _train_branch("depth", images_path, split_path, out_dir, cfg, feature_width)


def train_inertial(images_path, split_path, out_dir, cfg: TrainConfig, feature_width=500):
    return _train_branch("inertial", images_path, split_path, out_dir, cfg, feature_width)


# -- features -------------------------------------------------------------------

def extract(model_dir, images_path, out_dir) -> dict:
    net, meta = load_network(model_dir)
    doc, items = load_image_set(images_path)
    feats = net.features(np.stack([arr for _, _, arr in items]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for (key, index, _), f in zip(items, feats):
        name = _entry_name(key, index)
        tensor.save(f, out / name)
        entries.append({"path": name, "subject_id": key[0], "action_id": key[1],
                        "trial_id": key[2], "index": index})
    index_doc = {"source": meta.get("branch", ""), "width": int(feats.shape[1]),
                 "num_classes": doc["num_classes"], "features": entries}
    write_json(index_doc, out / FEATURE_INDEX)
    return index_doc


def load_trial_features(path, policy="final") -> tuple[dict, dict]:
    """Feature index plus ``{trial key: pooled vector}``; multiple vectors per
    trial (one per SFI) are pooled with ``policy`` in index order."""
    index = _index_path(path, FEATURE_INDEX)
    doc = _read_json(index)
    grouped: dict[tuple, list] = {}
    for e in sorted(doc["features"], key=lambda e: e["index"]):
        grouped.setdefault(_key(e), []).append(tensor.load(index.parent / e["path"]))
    return doc, {k: pool_sfi_features(v, policy) for k, v in grouped.items()}


def feature_rows(depth_path, inertial_path, keys, modality, policy):
    d_rows = i_rows = None
    num_classes = None
    if modality in ("depth", "fused"):
        doc, d = load_trial_features(depth_path, policy)
        num_classes = doc["num_classes"]
        d_rows = np.stack([d[k] for k in keys])
    if modality in ("inertial", "fused"):
        doc, i = load_trial_features(inertial_path, policy)
        num_classes = doc["num_classes"]
        i_rows = np.stack([i[k] for k in keys])
    x = modality_matrix(d_rows, i_rows, modality)
    return x, np.array([k[1] for k in keys]), num_classes


def fit_classifier(depth_path, inertial_path, split_path, out_dir, cfg: PipelineConfig,
                   seed: int):
    keys = load_split_keys(split_path, "train")
    x, y, num_classes = feature_rows(depth_path, inertial_path, keys, cfg.modality,
                                     cfg.fusion_policy)
    model = fit_classifier_head(cfg, x, y, num_classes, seed)
    meta = {"head": cfg.head, "modality": cfg.modality, "fusion_policy": cfg.fusion_policy,
            "seed": seed, "num_train": len(y)}
    save_linear_model(model, out_dir, meta)
    return model


def evaluate_classifier(classifier_dir, depth_path, inertial_path, split_path) -> Metrics:
    from .evaluation import evaluate

    model, meta = load_linear_model(classifier_dir)
    keys = load_split_keys(split_path, "test")
    x, y, _ = feature_rows(depth_path, inertial_path, keys, meta["modality"],
                           meta["fusion_policy"])
    return evaluate(model, x, y, model.num_classes)


def write_reports(result, out_dir, stem, formats=("json", "csv", "svg"), title=""):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv" and isinstance(result, dict):
            for name, r in result.items():
                paths.append(emit_report(r, "csv", out / f"{stem}_{name}.csv"))
        else:
            paths.append(emit_report(result, fmt, out / f"{stem}.{fmt}", title))
    return paths


# -- orchestration ----------------------------------------------------------------

def report_title(head: str, modality: str) -> str:
    return f"{head} head, {modality} features"


def dataset_manifest_path(cfg: PipelineConfig) -> Path:
    if cfg.manifest is not None:
        return cfg.path(cfg.manifest)
    return cfg.path(cfg.data_dir) / "manifest.json"


def run_all(cfg: PipelineConfig, out_dir=None) -> dict[str, Metrics]:
    """Every stage in order, single run with ``cfg.seed``; one classifier per ablation."""
    out = Path(out_dir) if out_dir is not None else cfg.path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed
    if cfg.manifest is None:
        log.info("stage synth")
        synth_generate(cfg.synth, cfg.synth_seed, cfg.path(cfg.data_dir))
    manifest = dataset_manifest_path(cfg)
    write_json(cfg.to_json(), out / "config.json")

    log.info("stage make-sfi")
    make_sfi(manifest, out / "sfi", cfg.sfi_epsilon, cfg.sfi_size)
    log.info("stage make-signal-images")
    make_signal_images(manifest, out / "signal")
    log.info("stage augment")
    augment_images(out / "signal", out / "signal_aug", seed, cfg.augment_factor,
                   cfg.noise_variance)
    make_split(manifest, out / "split.json", cfg.train_fraction, seed)

    log.info("stage train-depth")
    train_depth(out / "sfi", out / "split.json", out / "models" / "depth",
                replace(cfg.depth_train, seed=seed), cfg.feature_width)
    log.info("stage train-inertial")
    train_inertial(out / "signal_aug", out / "split.json", out / "models" / "inertial",
                   replace(cfg.inertial_train, seed=seed), cfg.feature_width)
    log.info("stage extract")
    extract(out / "models" / "depth", out / "sfi", out / "features" / "depth")
    extract(out / "models" / "inertial", out / "signal", out / "features" / "inertial")

    results = {}
    for modality in dict.fromkeys((cfg.modality, *cfg.ablations)):
        log.info("stage fit-classifier (%s)", modality)
        mcfg = replace(cfg, modality=modality)
        cdir = out / "classifiers" / f"{cfg.head}_{modality}"
        fit_classifier(out / "features" / "depth", out / "features" / "inertial",
                       out / "split.json", cdir, mcfg, seed)
        results[modality] = evaluate_classifier(cdir, out / "features" / "depth",
                                                out / "features" / "inertial", out / "split.json")
    log.info("stage evaluate")
    write_reports(results[cfg.modality], out, "metrics",
                  title=report_title(cfg.head, cfg.modality))
    ordered = {m: results[m] for m in MODALITIES if m in results}
    write_reports(ordered, out, "ablation", formats=("json", "svg"),
                  title=f"per-class accuracy by modality ({cfg.head} head)")
    return results


def repeat(cfg: PipelineConfig, out_dir=None, n_runs=None, base_seed=None):
    out = Path(out_dir) if out_dir is not None else cfg.path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = repeat_ablation(cfg, n_runs, base_seed,
                                tuple(dict.fromkeys((cfg.modality, *cfg.ablations))))
    ordered = {m: summaries[m] for m in MODALITIES if m in summaries}
    write_reports(ordered, out, "summary", formats=("json", "csv", "svg"),
                  title=f"mean per-class accuracy over {len(ordered[cfg.modality].seeds)} runs")
    return ordered
