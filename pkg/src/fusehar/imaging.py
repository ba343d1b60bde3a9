"""Turn raw modality recordings into 2-D images for the CNN branches.

Inertial recordings become 24x52 signal images: the six channels are
resampled to 52 samples and stacked row by row in an order where every
channel sits next to every other channel at least once. Depth videos become
sequential front-view images (SFIs), one per frame transition, each holding
the motion accumulated since the first frame.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dataset import DepthSequence, InertialSequence, TrialKey
from .tensor import ShapeError

SIGNAL_IMAGE_ROWS = 24
SIGNAL_IMAGE_COLS = 52
DEFAULT_SFI_EPSILON = 50.0  # mm
BICUBIC_A = -0.5

_ORDER_6 = tuple(int(c) for c in "1234561352461425361526161")


@dataclass
class SignalImage:
    pixels: np.ndarray  # [24, 52] float32 in [0, 1]
    key: TrialKey = (0, 0, 0)


@dataclass
class SfiImage:
    pixels: np.ndarray  # [H, W] float32 in [0, 1]
    frame_index: int
    key: TrialKey = (0, 0, 0)


def stacking_order_6() -> tuple[int, ...]:
    """Row order (1-based channel ids) used to build signal images."""
    return _ORDER_6


def adjacent_pairs(order) -> set[frozenset]:
    return {frozenset(p) for p in zip(order, order[1:]) if p[0] != p[1]}


def validate_stacking_order(order, num_channels: int = 6) -> bool:
    """True iff every unordered channel pair appears on neighbouring rows."""
    for c in order:
        if not 1 <= c <= num_channels:
            raise ValueError(f"channel index {c} outside 1..{num_channels}")
    needed = {frozenset(p) for p in itertools.combinations(range(1, num_channels + 1), 2)}
    return needed <= adjacent_pairs(order)


def minmax_normalize(img: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant image maps to zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.float32)
    return ((img - lo) / (hi - lo)).astype(np.float32)


def resample_channels(seq: InertialSequence | np.ndarray, target_len: int = SIGNAL_IMAGE_COLS) -> np.ndarray:
    """Linearly resample every channel onto ``target_len`` evenly spaced points.

    The grid spans the first to the last sample, so both endpoints are kept
    exactly.
    """
    samples = seq.samples if isinstance(seq, InertialSequence) else np.asarray(seq, np.float32)
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    n = samples.shape[1]
    if n < 2:
        raise ValueError("need at least 2 samples to resample")
    src = np.arange(n, dtype=np.float64)
    dst = np.linspace(0.0, n - 1, target_len)
    out = np.stack([np.interp(dst, src, ch.astype(np.float64)) for ch in samples])
    return out.astype(np.float32)


def make_signal_image(seq: InertialSequence) -> SignalImage:
    channels = minmax_normalize(resample_channels(seq, SIGNAL_IMAGE_COLS))
    rows = np.array(_ORDER_6[:SIGNAL_IMAGE_ROWS]) - 1  # the 25th row is dropped
    # Normalizing before stacking is equivalent: rows 0-5 already hold every channel.
    return SignalImage(np.ascontiguousarray(channels[rows]), seq.key)


def accumulate_motion(frames: np.ndarray, epsilon: float = DEFAULT_SFI_EPSILON) -> np.ndarray:
    """Cumulative thresholded absolute frame differences, ``[T-1, H, W]`` float64.

    Slice ``t`` sums ``|D[i+1] - D[i]|`` over ``i <= t`` wherever the difference
    exceeds ``epsilon``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError("need a [T, H, W] sequence with T >= 2")
    diff = np.abs(np.diff(frames, axis=0))
    diff[diff <= epsilon] = 0.0
    return np.cumsum(diff, axis=0)


def make_sfi_sequence(seq: DepthSequence, epsilon: float = DEFAULT_SFI_EPSILON) -> list[SfiImage]:
    energy = accumulate_motion(seq.frames, epsilon)
    return [SfiImage(minmax_normalize(e), t + 1, seq.key) for t, e in enumerate(energy)]


def _cubic_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``[n_out, n_in]`` interpolation weights, pixel-centre aligned, clamped edges."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in range(-1, 3):
        tap = base + off
        w = _cubic_kernel(src - tap)
        np.add.at(mat, (rows, np.clip(tap, 0, n_in - 1)), w)
    return mat


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a rank-2 image, got rank {img.ndim}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be >= 1, got {out_h}x{out_w}")
    h, w = img.shape
    if h < 4 or w < 4:
        raise ShapeError(f"input must be at least 4x4, got {h}x{w}")
    out = _bicubic_matrix(h, out_h) @ img @ _bicubic_matrix(w, out_w).T
    if img.min() >= 0.0 and img.max() <= 1.0:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32)


def to_three_channel(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ShapeError(f"expected a rank-2 image, got rank {img.ndim}")
    return np.ascontiguousarray(np.broadcast_to(img, (3,) + img.shape))


def prepare_sfi(pixels: np.ndarray, size: int) -> np.ndarray:
    """Resize an SFI to ``size x size`` unless it already has that shape."""
    if pixels.shape == (size, size):
        return np.asarray(pixels, dtype=np.float32)
    return resize_bicubic(pixels, size, size)
