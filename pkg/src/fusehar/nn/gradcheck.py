"""Central-difference gradient checking in double precision.

The oracle only ever calls forward passes and computes its own loss, so it
shares no code with the hand-written backward passes it verifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network

REL_FLOOR = 1e-8


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a, np.float64), np.asarray(n, np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x for scalar ``f`` by central differences; ``x`` is perturbed in place."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def _cross_entropy(logits: np.ndarray, label: int) -> float:
    z = logits[0] - logits[0].max()
    return float(np.log(np.exp(z).sum()) - z[label])


def _branch_pattern(net: Network, cache) -> list:
    """ReLU on/off masks and max-pool winners: the piece of the piecewise-smooth map."""
    pattern = []
    for spec, x in zip(net.layers, cache):
        if spec.kind == "relu":
            pattern.append(x > 0)
        elif spec.kind == "maxpool":
            n, c, h, w = x.shape
            oh = (h - spec.pool_h) // spec.stride + 1
            ow = (w - spec.pool_w) // spec.stride + 1
            cells = [x[:, :, u:u + spec.stride * (oh - 1) + 1:spec.stride,
                       v:v + spec.stride * (ow - 1) + 1:spec.stride]
                     for u in range(spec.pool_h) for v in range(spec.pool_w)]
            pattern.append(np.stack(cells, axis=-1).argmax(axis=-1))
    return pattern


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int  # coordinates whose ±eps window crosses a ReLU/max-pool switch
    per_param: dict


def grad_check_details(net: Network, sample, label: int, eps: float = 1e-5,
                       max_checks_per_param: int | None = None, seed: int = 0) -> GradCheckResult:
    if eps <= 0:
        raise ValueError("eps must be positive")
    net64 = net.astype(np.float64)
    x = net64._as_batch(np.asarray(sample, dtype=np.float64))[:1]
    _, _, grads = net64.loss_and_grads(x, np.array([label]))
    analytic = {f"layer{i}.{k}": g for i, gd in enumerate(grads) for k, g in gd.items()}

    def probe():
        logits, cache = net64.forward(x, keep=True)
        return _cross_entropy(logits, label), _branch_pattern(net64, cache)

    _, base_pattern = probe()
    rng = np.random.default_rng(seed)
    worst, checked, skipped, per_param = 0.0, 0, 0, {}
    for name, w in net64.param_items():
        flat, agrad = w.reshape(-1), analytic[name].reshape(-1)
        coords = np.arange(flat.size)
        if max_checks_per_param is not None and flat.size > max_checks_per_param:
            coords = np.sort(rng.choice(flat.size, max_checks_per_param, replace=False))
        param_worst = 0.0
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            hi, pat_hi = probe()
            flat[i] = old - eps
            lo, pat_lo = probe()
            flat[i] = old
            same = all(np.array_equal(a, b) and np.array_equal(a, c)
                       for a, b, c in zip(base_pattern, pat_hi, pat_lo))
            if not same:
                skipped += 1
                continue
            err = float(relative_error(agrad[i], (hi - lo) / (2 * eps)))
            param_worst = max(param_worst, err)
            checked += 1
        per_param[name] = param_worst
        worst = max(worst, param_worst)
    return GradCheckResult(worst, checked, skipped, per_param)


def grad_check(net: Network, sample, label: int = 0, eps: float = 1e-5,
               max_checks_per_param: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference parameter gradients.

    ``max_checks_per_param`` samples that many coordinates from each parameter
    tensor; large networks need it to finish in reasonable time.
    """
    return grad_check_details(net, sample, label, eps, max_checks_per_param, seed).max_rel_error
