"""Dataset manifests, raw modality loaders, splitting and a synthetic generator.

A dataset on disk is a JSON manifest listing trials. Each trial points at a
depth video stored as a rank-3 ``.hart`` tensor ``[T, H, W]`` (millimetres)
and an inertial recording stored as a header-less 6-column CSV (three
accelerometer axes in g, then three gyroscope axes in deg/s, one row per
sample).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor

DEFAULT_RATE_HZ = 50.0
NUM_INERTIAL_CHANNELS = 6


class DataError(ValueError):
    """Base class for every input-data problem (bad manifest, bad file)."""


class ManifestFieldError(DataError):
    pass


class ClassRangeError(DataError):
    pass


class DanglingPathError(DataError):
    def __init__(self, path):
        super().__init__(f"referenced file does not exist: {path}")
        self.path = str(path)


class DuplicateTrialError(DataError):
    pass


class SequenceRankError(DataError):
    pass


class SequenceValueError(DataError):
    pass


class ColumnCountError(DataError):
    pass


class NonNumericError(DataError):
    pass


class SequenceLengthError(DataError):
    pass


class SplitError(DataError):
    pass


TrialKey = tuple[int, int, int]  # (subject_id, action_id, trial_id)


@dataclass
class DepthSequence:
    frames: np.ndarray  # [T, H, W] float32, millimetres
    subject_id: int = 0
    action_id: int = 0
    trial_id: int = 0

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise SequenceRankError(
                f"depth sequence must be rank 3 [T,H,W], got rank {self.frames.ndim}")
        t, h, w = self.frames.shape
        if t < 2 or h < 8 or w < 8:
            raise SequenceLengthError(
                f"depth sequence needs T>=2 and H,W>=8, got {list(self.frames.shape)}")
        if not np.all(self.frames >= 0):
            raise SequenceValueError("depth values must be >= 0")

    @property
    def key(self) -> TrialKey:
        return (self.subject_id, self.action_id, self.trial_id)


@dataclass
class InertialSequence:
    samples: np.ndarray  # [6, N] float32
    rate_hz: float = DEFAULT_RATE_HZ
    subject_id: int = 0
    action_id: int = 0
    trial_id: int = 0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2 or self.samples.shape[0] != NUM_INERTIAL_CHANNELS:
            raise ColumnCountError(
                f"inertial sequence must be [6, N], got {list(self.samples.shape)}")
        if self.samples.shape[1] < 2:
            raise SequenceLengthError("inertial sequence needs at least 2 samples")
        if not self.rate_hz > 0:
            raise SequenceValueError(f"rate_hz must be positive, got {self.rate_hz}")

    @property
    def key(self) -> TrialKey:
        return (self.subject_id, self.action_id, self.trial_id)


@dataclass(frozen=True)
class TrialRecord:
    depth_path: str
    inertial_path: str
    subject_id: int
    action_id: int
    trial_id: int

    @property
    def key(self) -> TrialKey:
        return (self.subject_id, self.action_id, self.trial_id)


@dataclass
class DatasetManifest:
    name: str
    num_classes: int
    trials: list[TrialRecord]
    rate_hz: float = DEFAULT_RATE_HZ
    root: Path = field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def labels(self) -> np.ndarray:
        return np.array([t.action_id for t in self.trials], dtype=np.int64)

    def load_trial(self, index: int) -> tuple[DepthSequence, InertialSequence]:
        rec = self.trials[index]
        depth = load_depth_sequence(self.resolve(rec.depth_path), *rec.key)
        inertial = load_inertial_sequence(self.resolve(rec.inertial_path), self.rate_hz, *rec.key)
        return depth, inertial

    def to_json(self) -> dict:
        out = {"name": self.name, "num_classes": self.num_classes}
        if self.rate_hz != DEFAULT_RATE_HZ:
            out["rate_hz"] = self.rate_hz
        out["trials"] = [
            {"depth_path": t.depth_path, "inertial_path": t.inertial_path,
             "subject_id": t.subject_id, "action_id": t.action_id, "trial_id": t.trial_id}
            for t in self.trials
        ]
        return out


@dataclass(frozen=True)
class Split:
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int

    def to_json(self) -> dict:
        return {"seed": self.seed, "train_indices": list(self.train_indices),
                "test_indices": list(self.test_indices)}

    @classmethod
    def from_json(cls, doc: dict) -> "Split":
        return cls(tuple(doc["train_indices"]), tuple(doc["test_indices"]), int(doc["seed"]))


_TRIAL_FIELDS = {"depth_path": str, "inertial_path": str,
                 "subject_id": int, "action_id": int, "trial_id": int}


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ManifestFieldError(f"{where}: missing field {key!r}")
    value = doc[key]
    ok = isinstance(value, kind) and not (kind is int and isinstance(value, bool))
    if not ok:
        raise ManifestFieldError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def parse_manifest(doc: dict, root: Path, check_paths: bool = True) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise ManifestFieldError("manifest must be a JSON object")
    name = _require(doc, "name", str, "manifest")
    num_classes = _require(doc, "num_classes", int, "manifest")
    if num_classes < 1:
        raise ClassRangeError(f"num_classes must be positive, got {num_classes}")
    raw_trials = _require(doc, "trials", list, "manifest")
    rate = doc.get("rate_hz", DEFAULT_RATE_HZ)
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise ManifestFieldError("rate_hz must be a positive number")

    trials, seen = [], set()
    for i, raw in enumerate(raw_trials):
        where = f"trials[{i}]"
        if not isinstance(raw, dict):
            raise ManifestFieldError(f"{where} must be an object")
        values = {k: _require(raw, k, kind, where) for k, kind in _TRIAL_FIELDS.items()}
        rec = TrialRecord(**values)
        if not 0 <= rec.action_id < num_classes:
            raise ClassRangeError(
                f"{where}: action_id {rec.action_id} outside [0, {num_classes})")
        if rec.key in seen:
            raise DuplicateTrialError(f"{where}: duplicate (subject, action, trial) {rec.key}")
        seen.add(rec.key)
        if check_paths:
            for rel in (rec.depth_path, rec.inertial_path):
                if not (root / rel).is_file():
                    raise DanglingPathError(root / rel)
        trials.append(rec)
    return DatasetManifest(name, num_classes, trials, float(rate), root)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestFieldError(f"{path}: invalid JSON ({exc})") from None
    return parse_manifest(doc, path.parent.resolve())


def write_json(doc, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_depth_sequence(path, subject_id: int = 0, action_id: int = 0,
                        trial_id: int = 0) -> DepthSequence:
    frames = tensor.load(path)
    return DepthSequence(frames, subject_id, action_id, trial_id)


def load_inertial_sequence(path, rate_hz: float = DEFAULT_RATE_HZ, subject_id: int = 0,
                           action_id: int = 0, trial_id: int = 0) -> InertialSequence:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != NUM_INERTIAL_CHANNELS:
                raise ColumnCountError(
                    f"{path}:{lineno}: expected 6 columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise NonNumericError(f"{path}:{lineno}: non-numeric cell in {row}") from None
    if len(rows) < 2:
        raise SequenceLengthError(f"{path}: need at least 2 samples, got {len(rows)}")
    samples = np.asarray(rows, dtype=np.float64).astype(np.float32).T
    return InertialSequence(samples, rate_hz, subject_id, action_id, trial_id)


def write_inertial_csv(samples: np.ndarray, path) -> None:
    """Write a [6, N] array as N rows; values round-trip exactly through float32."""
    samples = np.asarray(samples, dtype=np.float32)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in samples.T:
            writer.writerow([repr(float(v)) for v in row])


def split_train_test(manifest: DatasetManifest | int, train_fraction: float, seed: int) -> Split:
    """Random pooled split over all trials (every subject appears on both sides).

    ``manifest`` may also be a plain trial count.
    """
    n = manifest if isinstance(manifest, int) else len(manifest.trials)
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n < 1:
        raise SplitError("cannot split an empty manifest")
    n_train = int(math.floor(train_fraction * n + 0.5))
    if n_train in (0, n):
        raise SplitError(f"fraction {train_fraction} of {n} trials leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return Split(tuple(sorted(int(i) for i in order[:n_train])),
                 tuple(sorted(int(i) for i in order[n_train:])), int(seed))


# -- synthetic data ---------------------------------------------------------

@dataclass
class SynthConfig:
    num_classes: int = 5
    trials_per_class: int = 20
    frames: int = 12
    height: int = 64
    width: int = 64
    inertial_len: int = 120
    noise_level: float = 0.05
    num_subjects: int = 4
    rate_hz: float = DEFAULT_RATE_HZ

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        for name in ("trials_per_class", "frames", "height", "width", "inertial_len",
                     "num_subjects"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.frames < 2 or self.inertial_len < 2 or min(self.height, self.width) < 8:
            raise ValueError("need frames >= 2, inertial_len >= 2, height/width >= 8")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")


BACKGROUND_MM = 3000.0
BLOB_DEPTH_MM = 1200.0
DEPTH_NOISE_MM = 400.0  # noise std = noise_level * this
JITTER = 0.25           # trial phase jitter, fraction of one action cycle


def _depth_trial(cfg: SynthConfig, k: int, jitter: float) -> np.ndarray:
    t = np.linspace(0.0, 1.0, cfg.frames) + jitter * 0.5
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    theta = 2 * math.pi * k / cfg.num_classes
    reach = 0.32 * min(cfg.height, cfg.width)
    sigma = 0.09 * min(cfg.height, cfg.width)
    # Straight sweep through the centre plus a class-specific sideways wiggle.
    along = reach * (t - 0.5)
    side = 0.25 * reach * np.sin(2 * math.pi * (k % 3 + 1) * t / 2)
    cx = cfg.width / 2 + along * math.cos(theta) - side * math.sin(theta)
    cy = cfg.height / 2 + along * math.sin(theta) + side * math.cos(theta)
    d2 = (xs[None] - cx[:, None, None]) ** 2 + (ys[None] - cy[:, None, None]) ** 2
    return BACKGROUND_MM - BLOB_DEPTH_MM * np.exp(-d2 / (2 * sigma ** 2))


def _inertial_trial(cfg: SynthConfig, k: int, jitter: float) -> np.ndarray:
    t = np.arange(cfg.inertial_len) / cfg.rate_hz
    duration = cfg.inertial_len / cfg.rate_hz
    freq = (1.0 + 0.6 * k) / duration
    chans = np.arange(NUM_INERTIAL_CHANNELS)[:, None]
    phase = 2 * math.pi * ((chans * (k + 1)) % 7) / 7
    amp = 1.0 + 0.5 * np.cos(chans + k)
    return amp * np.sin(2 * math.pi * freq * t[None] + phase + 2 * math.pi * jitter)


def synth_trials(cfg: SynthConfig, seed: int):
    """Yield ``(DepthSequence, InertialSequence)`` pairs, class-major order.

    Both modalities of a trial share one phase-jitter draw, so the blob's
    position along its trajectory and the sinusoid phases move together.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    for k in range(cfg.num_classes):
        for i in range(cfg.trials_per_class):
            jitter = rng.uniform(-JITTER, JITTER)
            depth = _depth_trial(cfg, k, jitter)
            inertial = _inertial_trial(cfg, k, jitter)
            if cfg.noise_level > 0:
                depth = depth + rng.normal(0.0, cfg.noise_level * DEPTH_NOISE_MM, depth.shape)
                inertial = inertial + rng.normal(0.0, cfg.noise_level, inertial.shape)
            depth = np.clip(depth, 0.0, None).astype(np.float32)
            subject = i % cfg.num_subjects + 1
            trial = i // cfg.num_subjects + 1
            yield (DepthSequence(depth, subject, k, trial),
                   InertialSequence(inertial.astype(np.float32), cfg.rate_hz, subject, k, trial))


def synth_generate(cfg: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    out = Path(out_dir)
    try:
        (out / "depth").mkdir(parents=True, exist_ok=True)
        (out / "inertial").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")

    trials = []
    for depth, inertial in synth_trials(cfg, seed):
        stem = "s{}_a{}_t{}".format(*depth.key)
        dpath, ipath = f"depth/{stem}.hart", f"inertial/{stem}.csv"
        tensor.save(depth.frames, out / dpath)
        write_inertial_csv(inertial.samples, out / ipath)
        trials.append(TrialRecord(dpath, ipath, *depth.key))
    manifest = DatasetManifest(f"synthetic-seed{seed}", cfg.num_classes, trials,
                               float(cfg.rate_hz), out.resolve())
    write_json(manifest.to_json(), out / "manifest.json")
    return manifest
