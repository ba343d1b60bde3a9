"""Signal-image augmentation: flips, half-turn rotation and Gaussian noise.

Only transforms that keep neighbouring rows neighbours are used, so the
channel adjacency built into a signal image survives augmentation.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError

DEFAULT_NOISE_VARIANCE = 0.009
GEOMETRIC = ("identity", "flip_lr", "flip_ud", "rotate_180")
VARIANTS = GEOMETRIC + tuple(name + "+noise" for name in GEOMETRIC)
AUGMENT_FACTOR = len(VARIANTS)


def _check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"expected a rank-2 image, got rank {img.ndim}")
    return img


def identity(img):
    return np.array(_check_image(img), copy=True)


def flip_lr(img):
    return np.ascontiguousarray(_check_image(img)[:, ::-1])


def flip_ud(img):
    return np.ascontiguousarray(_check_image(img)[::-1, :])


def rotate_180(img):
    return np.ascontiguousarray(_check_image(img)[::-1, ::-1])


_GEOMETRIC_OPS = {"identity": identity, "flip_lr": flip_lr, "flip_ud": flip_ud,
                  "rotate_180": rotate_180}


def add_gaussian_noise(img, variance: float = DEFAULT_NOISE_VARIANCE, seed=None):
    """Add zero-mean i.i.d. Gaussian noise and clip back into [0, 1].

    ``seed`` may be an int or an existing ``numpy.random.Generator``.
    """
    img = _check_image(img)
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return np.array(img, dtype=np.float32, copy=True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noisy = img.astype(np.float64) + rng.normal(0.0, np.sqrt(variance), img.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def augment_image(img, seed: int, factor: int = AUGMENT_FACTOR,
                  variance: float = DEFAULT_NOISE_VARIANCE) -> list[np.ndarray]:
    """The first ``factor`` entries of :data:`VARIANTS` applied to one image."""
    if not 1 <= factor <= AUGMENT_FACTOR:
        raise ValueError(f"factor must lie in 1..{AUGMENT_FACTOR}, got {factor}")
    rng = np.random.default_rng(seed)
    out = []
    for name in VARIANTS[:factor]:
        base = _GEOMETRIC_OPS[name.split("+")[0]](img)
        if name.endswith("+noise"):
            base = add_gaussian_noise(base, variance, rng)
        out.append(base.astype(np.float32, copy=False))
    return out


def augment_set(images, seed: int, factor: int = AUGMENT_FACTOR,
                variance: float = DEFAULT_NOISE_VARIANCE) -> list[np.ndarray]:
    """Expand every image into ``factor`` variants, image-major order.

    Image ``i`` draws its noise from ``seed ^ i`` so the result does not depend
    on how the work is scheduled. Labels follow with ``np.repeat(labels, factor)``.
    """
    images = list(images)
    if not images:
        raise ValueError("augment_set needs at least one image")
    out = []
    for i, img in enumerate(images):
        out.extend(augment_image(img, int(seed) ^ i, factor, variance))
    return out
