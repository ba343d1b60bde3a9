"""End-to-end experiment: images -> two CNN branches -> fused features -> linear head.

One run with seed ``s`` splits the trials, augments signal images, trains
both branches, extracts per-trial features and fits/evaluates a classifier
for every requested modality (``depth``, ``inertial`` or ``fused``).
Repeated runs use seeds ``base_seed + r``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import augment, imaging
from .classify import (ALIGN_POLICIES, HEADS, LinearModel, SoftmaxConfig, SvmConfig, fit_head,
                       pool_sfi_features, tune_svm_c)
from .dataset import DatasetManifest, Split, SynthConfig, TrialKey, split_train_test
from .evaluation import Metrics, RunSummary, evaluate, summarize
from .nn import TABLE_I, TABLE_II, Network, TrainConfig, build_depth_net, build_signal_net, train

log = logging.getLogger(__name__)

MODALITIES = ("depth", "inertial", "fused")


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    def __init__(self, run_index: int, stage: str, cause: Exception):
        super().__init__(f"run {run_index} failed in stage {stage!r}: {cause}")
        self.run_index, self.stage, self.cause = run_index, stage, cause


def _sub(cls, doc, what):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {what} fields: {sorted(unknown)}")
    return cls(**doc)


@dataclass
class PipelineConfig:
    manifest: str | None = None          # existing dataset manifest
    synth: SynthConfig | None = None     # or generate one
    synth_seed: int = 7
    data_dir: str = "data"
    output_dir: str = "out"
    seed: int = 0
    train_fraction: float = 0.8
    sfi_epsilon: float = imaging.DEFAULT_SFI_EPSILON
    sfi_size: int = 64
    augment_factor: int = augment.AUGMENT_FACTOR
    noise_variance: float = augment.DEFAULT_NOISE_VARIANCE
    feature_width: int = 500
    depth_train: TrainConfig = TABLE_I
    inertial_train: TrainConfig = TABLE_II
    fusion_policy: str = "final"
    head: str = "svm"
    svm: SvmConfig = field(default_factory=SvmConfig)
    softmax: SoftmaxConfig = field(default_factory=SoftmaxConfig)
    tune_c: bool = False
    modality: str = "fused"
    ablations: tuple[str, ...] = MODALITIES
    runs: int = 20
    base_dir: Path = field(default_factory=Path, repr=False)

    def __post_init__(self):
        if self.fusion_policy not in ALIGN_POLICIES:
            raise ConfigError(f"fusion_policy must be one of {ALIGN_POLICIES}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}")
        for m in (self.modality, *self.ablations):
            if m not in MODALITIES:
                raise ConfigError(f"unknown modality {m!r}; expected one of {MODALITIES}")
        if self.manifest is None and self.synth is None:
            raise ConfigError("config needs either 'manifest' or 'synth'")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    @classmethod
    def from_json(cls, doc: dict, base_dir=None) -> "PipelineConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            if "synth" in doc and doc["synth"] is not None:
                doc["synth"] = _sub(SynthConfig, doc["synth"], "synth")
            doc["depth_train"] = TrainConfig.from_json(doc.get("depth_train", {}), TABLE_I)
            doc["inertial_train"] = TrainConfig.from_json(doc.get("inertial_train", {}), TABLE_II)
            doc["svm"] = _sub(SvmConfig, doc.get("svm"), "svm")
            doc["softmax"] = _sub(SoftmaxConfig, doc.get("softmax"), "softmax")
            if "ablations" in doc:
                doc["ablations"] = tuple(doc["ablations"])
            return cls(**doc, base_dir=Path(base_dir or "."))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_json(doc, path.parent.resolve())

    def to_json(self) -> dict:
        doc = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if hasattr(v, "__dataclass_fields__"):
                v = {g.name: getattr(v, g.name) for g in fields(v)}
            elif isinstance(v, tuple):
                v = list(v)
            doc[f.name] = v
        return doc

    def head_config(self, seed: int):
        cfg = self.svm if self.head == "svm" else self.softmax
        return replace(cfg, seed=seed)


@dataclass
class TrialImages:
    key: TrialKey
    label: int
    sfis: np.ndarray    # [T-1, S, S], ordered by frame
    signal: np.ndarray  # [24, 52]


def sfi_stack(depth, epsilon: float, size: int) -> np.ndarray:
    return np.stack([imaging.prepare_sfi(s.pixels, size)
                     for s in imaging.make_sfi_sequence(depth, epsilon)])


def build_trial_images(manifest: DatasetManifest, epsilon: float, sfi_size: int) -> list[TrialImages]:
    out = []
    for i, rec in enumerate(manifest.trials):
        depth, inertial = manifest.load_trial(i)
        out.append(TrialImages(rec.key, rec.action_id, sfi_stack(depth, epsilon, sfi_size),
                               imaging.make_signal_image(inertial).pixels))
    return out


def augmented_signal_images(trials: list[TrialImages], seed: int, factor: int,
                            variance: float) -> np.ndarray:
    """``[len(trials) * factor, 24, 52]``, trial-major, in the input order."""
    return np.stack(augment.augment_set([t.signal for t in trials], seed, factor, variance))


def train_depth_branch(trials: list[TrialImages], cfg: TrainConfig, num_classes: int,
                       sfi_size: int, feature_width: int) -> tuple[Network, list]:
    x = np.concatenate([t.sfis for t in trials])
    y = np.concatenate([np.full(len(t.sfis), t.label) for t in trials])
    net = build_depth_net(num_classes, sfi_size, feature_width)
    history = train(net, x, y, cfg)
    return net, history


def train_inertial_branch(images: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                          num_classes: int, feature_width: int) -> tuple[Network, list]:
    net = build_signal_net(num_classes, feature_width)
    history = train(net, images, labels, cfg)
    return net, history


def modality_matrix(depth: np.ndarray, inertial: np.ndarray, modality: str) -> np.ndarray:
    """Per-trial feature rows for one ablation; ``fused`` concatenates depth then inertial."""
    if modality == "depth":
        return depth
    if modality == "inertial":
        return inertial
    if modality == "fused":
        return np.concatenate([depth, inertial], axis=1)
    raise ConfigError(f"unknown modality {modality!r}; expected one of {MODALITIES}")


def trial_feature_rows(depth_net: Network, inertial_net: Network, trials: list[TrialImages],
                       policy: str) -> tuple[np.ndarray, np.ndarray]:
    """Pooled depth features and signal-image features, one row per trial."""
    counts = [len(t.sfis) for t in trials]
    sfi_feats = depth_net.features(np.concatenate([t.sfis for t in trials]))
    bounds = np.cumsum([0] + counts)
    depth = np.stack([pool_sfi_features(sfi_feats[a:b], policy)
                      for a, b in zip(bounds[:-1], bounds[1:])])
    inertial = inertial_net.features(np.stack([t.signal for t in trials]))
    return depth, inertial


def fit_classifier_head(cfg: PipelineConfig, x_train, y_train, num_classes: int,
                        seed: int) -> LinearModel:
    head_cfg = cfg.head_config(seed)
    if cfg.head == "svm" and cfg.tune_c:
        head_cfg = replace(head_cfg, c=tune_svm_c(x_train, y_train, cfg=head_cfg,
                                                  num_classes=num_classes))
    return fit_head(cfg.head, x_train, y_train, head_cfg, num_classes)


def fit_and_evaluate(cfg: PipelineConfig, x_train, y_train, x_test, y_test, num_classes: int,
                     seed: int) -> tuple[LinearModel, Metrics]:
    model = fit_classifier_head(cfg, x_train, y_train, num_classes, seed)
    return model, evaluate(model, x_test, y_test, num_classes)


@dataclass
class RunResult:
    seed: int
    split: Split
    metrics: dict[str, Metrics]
    models: dict[str, LinearModel]
    depth_history: list = field(repr=False, default_factory=list)
    inertial_history: list = field(repr=False, default_factory=list)


def run_once(cfg: PipelineConfig, trials: list[TrialImages], num_classes: int, seed: int,
             modalities=None, run_index: int = 0) -> RunResult:
    modalities = tuple(modalities or (cfg.modality,))
    stage = "split"
    try:
        split = split_train_test(len(trials), cfg.train_fraction, seed)
        tr = [trials[i] for i in split.train_indices]
        te = [trials[i] for i in split.test_indices]

        stage = "augment"
        aug = augmented_signal_images(trials, seed, cfg.augment_factor, cfg.noise_variance)
        rows = np.concatenate([np.arange(i * cfg.augment_factor, (i + 1) * cfg.augment_factor)
                               for i in split.train_indices])
        aug_labels = np.repeat([t.label for t in trials], cfg.augment_factor)

        stage = "train-depth"
        depth_net, dhist = train_depth_branch(tr, replace(cfg.depth_train, seed=seed),
                                              num_classes, cfg.sfi_size, cfg.feature_width)
        stage = "train-inertial"
        inertial_net, ihist = train_inertial_branch(
            aug[rows], aug_labels[rows], replace(cfg.inertial_train, seed=seed),
            num_classes, cfg.feature_width)

        stage = "extract"
        d_tr, i_tr = trial_feature_rows(depth_net, inertial_net, tr, cfg.fusion_policy)
        d_te, i_te = trial_feature_rows(depth_net, inertial_net, te, cfg.fusion_policy)
        y_tr = np.array([t.label for t in tr])
        y_te = np.array([t.label for t in te])

        stage = "fit-classifier"
        metrics, models = {}, {}
        for m in modalities:
            models[m], metrics[m] = fit_and_evaluate(
                cfg, modality_matrix(d_tr, i_tr, m), y_tr, modality_matrix(d_te, i_te, m), y_te,
                num_classes, seed)
    except Exception as exc:
        raise RunError(run_index, stage, exc) from exc
    log.info("run %d (seed %d): %s", run_index, seed,
             ", ".join(f"{m}={metrics[m].overall_accuracy:.3f}" for m in modalities))
    return RunResult(seed, split, metrics, models, dhist, ihist)


def load_dataset(cfg: PipelineConfig) -> DatasetManifest:
    from .dataset import load_manifest, synth_generate

    if cfg.manifest is not None:
        return load_manifest(cfg.path(cfg.manifest))
    return synth_generate(cfg.synth, cfg.synth_seed, cfg.path(cfg.data_dir))


def repeat_ablation(cfg: PipelineConfig, n_runs: int | None = None, base_seed: int | None = None,
                    modalities=None, trials=None, num_classes=None) -> dict[str, RunSummary]:
    """Run the protocol ``n_runs`` times and summarize every requested modality.

    All modalities of one run share the same split and trained branches.
    """
    n_runs = cfg.runs if n_runs is None else n_runs
    base_seed = cfg.seed if base_seed is None else base_seed
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    modalities = tuple(modalities or cfg.ablations)
    if trials is None:
        manifest = load_dataset(cfg)
        trials = build_trial_images(manifest, cfg.sfi_epsilon, cfg.sfi_size)
        num_classes = manifest.num_classes
    results = [run_once(cfg, trials, num_classes, base_seed + r, modalities, r)
               for r in range(n_runs)]
    results.sort(key=lambda r: r.seed)
    seeds = [r.seed for r in results]
    return {m: summarize([r.metrics[m] for r in results], seeds, m) for m in modalities}


def repeat_runs(cfg: PipelineConfig, n_runs: int | None = None, base_seed: int | None = None,
                **kwargs) -> RunSummary:
    return repeat_ablation(cfg, n_runs, base_seed, (cfg.modality,), **kwargs)[cfg.modality]


def ablate_modality(cfg: PipelineConfig, modality: str, n_runs: int | None = None,
                    base_seed: int | None = None, **kwargs) -> RunSummary:
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    return repeat_ablation(cfg, n_runs, base_seed, (modality,), **kwargs)[modality]
