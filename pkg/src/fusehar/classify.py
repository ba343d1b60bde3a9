"""Feature-level fusion and linear classifier heads.

Depth and inertial feature vectors of one trial are concatenated into a
single vector. Two heads are trained on fused (or single-modality) vectors:
a one-vs-rest linear SVM, scores ``W x + b``, and a softmax classifier that
turns the same affine scores into class probabilities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor
from .nn.functional import softmax
from .nn.network import FeatureVector

ALIGN_POLICIES = ("final", "mean")
HEADS = ("svm", "softmax")


class ClassifierError(ValueError):
    pass


class TrialKeyMismatchError(ClassifierError):
    pass


@dataclass
class FusedSample:
    features: np.ndarray
    label: int
    key: tuple = (0, 0, 0)


def fuse(depth_feat: FeatureVector, inertial_feat: FeatureVector) -> FusedSample:
    if tuple(depth_feat.key) != tuple(inertial_feat.key):
        raise TrialKeyMismatchError(
            f"depth features belong to {depth_feat.key}, inertial to {inertial_feat.key}")
    values = np.concatenate([np.asarray(depth_feat.values, np.float32),
                             np.asarray(inertial_feat.values, np.float32)])
    return FusedSample(values, int(depth_feat.key[1]), tuple(depth_feat.key))


def pool_sfi_features(depth_feats, policy: str = "final") -> np.ndarray:
    """Collapse the per-SFI feature vectors of one trial into one vector."""
    if policy not in ALIGN_POLICIES:
        raise ValueError(f"unknown alignment policy {policy!r}; expected one of {ALIGN_POLICIES}")
    feats = [np.asarray(getattr(f, "values", f), np.float32) for f in depth_feats]
    if not feats:
        raise ClassifierError("trial has no SFI features")
    if policy == "final":
        return feats[-1]
    return np.mean(np.stack(feats).astype(np.float64), axis=0).astype(np.float32)


def align_trial_features(depth_feats: list[FeatureVector], inertial_feat: FeatureVector,
                         policy: str = "final") -> FusedSample:
    """Fuse a trial's SFI features (ordered by frame) with its signal-image features.

    ``final`` keeps the last SFI, which has seen the whole action; ``mean``
    averages all of them.
    """
    pooled = pool_sfi_features(depth_feats, policy)
    key = tuple(depth_feats[0].key) if hasattr(depth_feats[0], "key") else tuple(inertial_feat.key)
    return fuse(FeatureVector(pooled, "depth", key), inertial_feat)


def stack_samples(samples: list[FusedSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.asarray(s.features, np.float32) for s in samples])
    return x, np.array([s.label for s in samples], dtype=np.int64)


@dataclass
class LinearModel:
    weight: np.ndarray   # [C, D]
    bias: np.ndarray     # [C]
    kind: str
    mean: np.ndarray     # [D] feature means at fit time
    scale: np.ndarray    # [D] feature scales at fit time, all > 0
    history: list = field(default_factory=list, repr=False)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    def scores(self, x) -> np.ndarray:
        """Raw affine scores for a batch ``[N, D]`` (or one vector)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.feature_dim:
            raise ClassifierError(
                f"feature length {x.shape[-1]} does not match model dimension {self.feature_dim}")
        z = (x - self.mean) / self.scale
        return z @ self.weight.astype(np.float64).T + self.bias


def _fit_standardizer(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if not np.any(std > 0):
        raise ClassifierError("all training feature vectors are identical")
    # constant columns carry no information; a unit scale leaves them at zero
    scale = np.where(std > 0, std, 1.0)
    return mean.astype(np.float32), scale.astype(np.float32)


def _check_training_set(x, y, num_classes):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ClassifierError("expected features [N, D] and N labels")
    if len(y) < 2:
        raise ClassifierError("need at least 2 training samples")
    if len(np.unique(y)) < 2:
        raise ClassifierError("need at least 2 classes in the training set")
    num_classes = int(y.max()) + 1 if num_classes is None else int(num_classes)
    if y.min() < 0 or y.max() >= num_classes:
        raise ClassifierError(f"labels must lie in [0, {num_classes})")
    return x, y, num_classes


@dataclass(frozen=True)
class SvmConfig:
    c: float = 1.0
    epochs: int = 300
    lr: float = 0.01
    seed: int = 0
    batch_size: int | None = None  # None = full batch


@dataclass(frozen=True)
class SoftmaxConfig:
    l2: float = 1e-3
    epochs: int = 300
    lr: float = 0.1
    seed: int = 0
    batch_size: int | None = None


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def svm_objective(weight, bias, z, y_pm, lam) -> float:
    """Sum over one-vs-rest heads of  lam/2 |w|^2 + mean(max(0, 1 - y (w.z + b)))."""
    margins = y_pm * (z @ weight.T + bias)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return float((0.5 * lam * (weight ** 2).sum(axis=1) + hinge).sum())


def fit_svm(x, y, cfg: SvmConfig = SvmConfig(), num_classes: int | None = None) -> LinearModel:
    """One-vs-rest linear SVMs by subgradient descent on the L2-regularized hinge loss.

    With ``n`` training samples the regularization weight is ``1 / (c n)``.
    Features are standardized first; the statistics are stored in the model.
    ``model.history`` holds the summed objective after every epoch.
    """
    x, y, num_classes = _check_training_set(x, y, num_classes)
    if cfg.c <= 0 or cfg.lr <= 0 or cfg.epochs < 0:
        raise ClassifierError("c and lr must be positive, epochs >= 0")
    mean, scale = _fit_standardizer(x)
    z = (x - mean) / scale
    n, d = z.shape
    lam = 1.0 / (cfg.c * n)
    y_pm = np.where(y[:, None] == np.arange(num_classes)[None, :], 1.0, -1.0)
    w = np.zeros((num_classes, d))
    b = np.zeros(num_classes)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        for idx in _batches(n, cfg.batch_size, rng):
            zb, yb = z[idx], y_pm[idx]
            active = (yb * (zb @ w.T + b) < 1.0) * yb  # -d hinge / d score
            gw = lam * w - active.T @ zb / len(idx)
            gb = -active.sum(axis=0) / len(idx)
            w -= cfg.lr * gw
            b -= cfg.lr * gb
        history.append(svm_objective(w, b, z, y_pm, lam))
    return LinearModel(w.astype(np.float32), b.astype(np.float32), "svm", mean, scale, history)


def fit_softmax(x, y, cfg: SoftmaxConfig = SoftmaxConfig(),
                num_classes: int | None = None) -> LinearModel:
    """Multinomial logistic regression by gradient descent on cross-entropy + L2.

    Weights start at zero, so a zero-epoch fit predicts the uniform distribution.
    """
    x, y, num_classes = _check_training_set(x, y, num_classes)
    if cfg.l2 < 0 or cfg.lr <= 0 or cfg.epochs < 0:
        raise ClassifierError("l2 must be >= 0, lr positive, epochs >= 0")
    mean, scale = _fit_standardizer(x)
    z = (x - mean) / scale
    n, d = z.shape
    onehot = (y[:, None] == np.arange(num_classes)[None, :]).astype(np.float64)
    w = np.zeros((num_classes, d))
    b = np.zeros(num_classes)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        for idx in _batches(n, cfg.batch_size, rng):
            p = softmax(z[idx] @ w.T + b)
            delta = (p - onehot[idx]) / len(idx)
            w -= cfg.lr * (delta.T @ z[idx] + cfg.l2 * w)
            b -= cfg.lr * delta.sum(axis=0)
        p = softmax(z @ w.T + b)
        loss = -np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean()
        history.append(float(loss + 0.5 * cfg.l2 * (w ** 2).sum()))
    return LinearModel(w.astype(np.float32), b.astype(np.float32), "softmax", mean, scale, history)


def fit_head(head: str, x, y, cfg=None, num_classes=None) -> LinearModel:
    if head == "svm":
        return fit_svm(x, y, cfg or SvmConfig(), num_classes)
    if head == "softmax":
        return fit_softmax(x, y, cfg or SoftmaxConfig(), num_classes)
    raise ClassifierError(f"unknown head {head!r}; expected one of {HEADS}")


def predict(model: LinearModel, features) -> tuple[int, np.ndarray]:
    """Class id and score vector for one feature vector.

    SVM scores are ``W x + b``; the softmax head returns probabilities. Ties go
    to the lowest class id.
    """
    scores = model.scores(np.asarray(features).reshape(-1))
    if model.kind == "softmax":
        scores = softmax(scores)
    return int(np.argmax(scores)), scores


def predict_batch(model: LinearModel, x) -> tuple[np.ndarray, np.ndarray]:
    scores = model.scores(np.atleast_2d(x))
    if model.kind == "softmax":
        scores = softmax(scores, axis=1)
    return scores.argmax(axis=1), scores


def tune_svm_c(x, y, grid=(0.1, 1.0, 10.0), cfg: SvmConfig = SvmConfig(),
               val_fraction: float = 0.25, num_classes: int | None = None) -> float:
    """Pick ``c`` by accuracy on a seeded hold-out slice of the training set.

    Ties keep the earliest grid entry.
    """
    x, y, num_classes = _check_training_set(x, y, num_classes)
    order = np.random.default_rng([cfg.seed, 7]).permutation(len(y))
    n_val = max(1, int(round(val_fraction * len(y))))
    val, fit = order[:n_val], order[n_val:]
    if len(np.unique(y[fit])) < 2:
        return cfg.c
    best_c, best_acc = cfg.c, -1.0
    for c in grid:
        model = fit_svm(x[fit], y[fit], SvmConfig(c, cfg.epochs, cfg.lr, cfg.seed, cfg.batch_size),
                        num_classes)
        acc = float((predict_batch(model, x[val])[0] == y[val]).mean())
        if acc > best_acc:
            best_c, best_acc = float(c), acc
    return best_c


def save_linear_model(model: LinearModel, directory, meta: dict | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {"weight": "W.hart", "bias": "b.hart", "mean": "mean.hart", "scale": "scale.hart"}
    for attr, fname in files.items():
        tensor.save(getattr(model, attr), out / fname)
    doc = {"kind": model.kind, "num_classes": model.num_classes,
           "feature_dim": model.feature_dim, "tensors": files, "meta": meta or {}}
    (out / "classifier.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_linear_model(directory) -> tuple[LinearModel, dict]:
    src = Path(directory)
    doc = json.loads((src / "classifier.json").read_text())
    arrays = {attr: tensor.load(src / fname) for attr, fname in doc["tensors"].items()}
    if doc["kind"] not in HEADS:
        raise ClassifierError(f"unknown classifier kind {doc['kind']!r}")
    if np.any(arrays["scale"] <= 0):
        raise ClassifierError("stored feature scales must be positive")
    return LinearModel(kind=doc["kind"], **arrays), doc.get("meta", {})


def config_to_json(cfg) -> dict:
    return asdict(cfg)
