"""Layer stacks for the two CNN branches.

``build_signal_net`` is the signal-image network (two 5x5 conv / 2x2 pool
stages with 50 and 100 kernels, one hidden FC layer, softmax).
``build_depth_net`` is a small from-scratch stand-in for the image backbone
used on SFIs, with the class layer sized to the dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor
from . import functional as F

DEFAULT_FEATURE_WIDTH = 500
LAYER_KINDS = ("conv", "maxpool", "relu", "fc", "softmax")


class NetworkBuildError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    num_kernels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    padding: str = "none"
    pool_h: int = 0
    pool_w: int = 0
    out_features: int = 0

    def to_json(self) -> dict:
        keep = {"conv": ("num_kernels", "kernel_h", "kernel_w", "stride", "padding"),
                "maxpool": ("pool_h", "pool_w", "stride"),
                "fc": ("out_features",)}.get(self.kind, ())
        return {"kind": self.kind, **{k: getattr(self, k) for k in keep}}


def conv(num_kernels, size=5, stride=1):
    return LayerSpec("conv", num_kernels=num_kernels, kernel_h=size, kernel_w=size, stride=stride)


def maxpool(size=2, stride=2):
    return LayerSpec("maxpool", pool_h=size, pool_w=size, stride=stride)


def fc(out_features):
    return LayerSpec("fc", out_features=out_features)


RELU = LayerSpec("relu")
SOFTMAX = LayerSpec("softmax")


def _output_dims(spec: LayerSpec, dims: tuple[int, ...]) -> tuple[int, ...]:
    if spec.kind not in LAYER_KINDS:
        raise NetworkBuildError(f"unknown layer kind {spec.kind!r}")
    if spec.kind in ("relu", "softmax"):
        return dims
    if spec.kind == "fc":
        if spec.out_features < 1:
            raise NetworkBuildError("fc out_features must be positive")
        return (spec.out_features,)
    if len(dims) != 3:
        raise NetworkBuildError(f"{spec.kind} needs a [C,H,W] input, got {list(dims)}")
    if spec.stride < 1:
        raise NetworkBuildError("stride must be >= 1")
    c, h, w = dims
    if spec.kind == "conv":
        if spec.padding != "none":
            raise NetworkBuildError("only padding='none' is supported")
        kh, kw, out_c = spec.kernel_h, spec.kernel_w, spec.num_kernels
        if min(kh, kw, out_c) < 1:
            raise NetworkBuildError("conv sizes must be positive")
    else:
        kh, kw, out_c = spec.pool_h, spec.pool_w, c
        if min(kh, kw) < 1:
            raise NetworkBuildError("pool sizes must be positive")
    if h < kh or w < kw:
        raise NetworkBuildError(f"{spec.kind} window {kh}x{kw} exceeds input {h}x{w}")
    return (out_c, (h - kh) // spec.stride + 1, (w - kw) // spec.stride + 1)


@dataclass
class Network:
    layers: list[LayerSpec]
    input_dims: tuple[int, ...]
    params: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.input_dims = tuple(int(d) for d in self.input_dims)
        if not self.layers or self.layers[-1].kind != "softmax":
            raise NetworkBuildError("the last layer must be softmax")
        if any(s.kind == "softmax" for s in self.layers[:-1]):
            raise NetworkBuildError("softmax may only appear last")
        self.trace = self.shape_trace()
        if not self.params:
            self.params = [{} for _ in self.layers]
            self.initialize(0)

    @property
    def num_classes(self) -> int:
        return self.trace[-1][0]

    def shape_trace(self) -> list[tuple[int, ...]]:
        """Activation dims after every layer, input first."""
        dims = [self.input_dims]
        for spec in self.layers:
            dims.append(_output_dims(spec, dims[-1]))
        return dims

    def initialize(self, seed: int) -> None:
        """He-scaled Gaussian weights, zero biases."""
        rng = np.random.default_rng([int(seed), 0])
        for i, spec in enumerate(self.layers):
            in_dims = self.trace[i]
            if spec.kind == "conv":
                shape = (spec.num_kernels, in_dims[0], spec.kernel_h, spec.kernel_w)
                fan_in = in_dims[0] * spec.kernel_h * spec.kernel_w
            elif spec.kind == "fc":
                fan_in = int(np.prod(in_dims))
                shape = (spec.out_features, fan_in)
            else:
                self.params[i] = {}
                continue
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(np.float32)
            self.params[i] = {"weight": w, "bias": np.zeros(shape[0], np.float32)}

    @property
    def dtype(self):
        return next(self.param_items())[1].dtype

    def param_items(self):
        """Yield ``(name, array)`` in a fixed order."""
        for i, p in enumerate(self.params):
            for key in ("weight", "bias"):
                if key in p:
                    yield f"layer{i}.{key}", p[key]

    def num_params(self) -> int:
        return sum(a.size for _, a in self.param_items())

    def astype(self, dtype) -> "Network":
        params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return Network(list(self.layers), self.input_dims, params)

    def copy(self) -> "Network":
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        return Network(list(self.layers), self.input_dims, params)

    def _as_batch(self, x):
        x = np.asarray(x)
        if x.ndim == len(self.input_dims) + 1 and x.shape[1:] == self.input_dims:
            return x
        if x.shape == self.input_dims:
            return x[None]
        # allow [N, H, W] for single-channel nets
        if self.input_dims[0] == 1 and x.shape[-2:] == self.input_dims[1:] and x.ndim in (2, 3):
            return x.reshape((-1,) + self.input_dims)
        raise tensor.ShapeError(f"input {list(x.shape)} does not match network {list(self.input_dims)}")

    def forward(self, x, upto: int | None = None, keep: bool = False):
        """Run layers ``[0, upto)`` (all but softmax by default); returns pre-softmax logits.

        With ``keep`` the per-layer inputs are returned too, for :meth:`backward`.
        """
        x = self._as_batch(x).astype(self.dtype, copy=False)
        stop = len(self.layers) - 1 if upto is None else upto
        cache = []
        for spec, p in zip(self.layers[:stop], self.params[:stop]):
            cache.append(x)
            if spec.kind == "conv":
                x = F.conv2d_forward(x, p["weight"], p["bias"], spec.stride)
            elif spec.kind == "maxpool":
                x = F.maxpool2d_forward(x, (spec.pool_h, spec.pool_w), spec.stride)
            elif spec.kind == "relu":
                x = F.relu_forward(x)
            elif spec.kind == "fc":
                x = F.fc_forward(x.reshape(len(x), -1), p["weight"], p["bias"])
        return (x, cache) if keep else x

    def backward(self, dlogits, cache) -> list[dict]:
        grads = [{} for _ in self.layers]
        d = dlogits
        for i in range(len(cache) - 1, -1, -1):
            spec, p, x = self.layers[i], self.params[i], cache[i]
            if spec.kind == "conv":
                d, dw, db = F.conv2d_backward(d, x, p["weight"], spec.stride, need_dx=i > 0)
                grads[i] = {"weight": dw, "bias": db}
            elif spec.kind == "maxpool":
                d = F.maxpool2d_backward(d, x, (spec.pool_h, spec.pool_w), spec.stride)
            elif spec.kind == "relu":
                d = F.relu_backward(d, x)
            elif spec.kind == "fc":
                d, dw, db = F.fc_backward(d, x.reshape(len(x), -1), p["weight"])
                d = d.reshape(x.shape)
                grads[i] = {"weight": dw, "bias": db}
        return grads

    def loss_and_grads(self, x, labels):
        logits, cache = self.forward(x, keep=True)
        loss, dlogits = F.softmax_cross_entropy_batch(logits, labels)
        return loss, logits, self.backward(dlogits, cache)

    def predict_proba(self, x, batch_size: int = 256):
        x = self._as_batch(x)
        out = [F.softmax(self.forward(x[i:i + batch_size]))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    @property
    def feature_layer(self) -> int:
        """Number of leading layers whose output is the feature vector.

        That is the hidden FC layer just before the class layer, plus its ReLU.
        """
        fcs = [i for i, s in enumerate(self.layers) if s.kind == "fc"]
        if len(fcs) < 2:
            raise NetworkBuildError("feature extraction needs a hidden fc layer")
        stop = fcs[-2] + 1
        if self.layers[stop].kind == "relu":
            stop += 1
        return stop

    @property
    def feature_width(self) -> int:
        return self.trace[self.feature_layer][0]

    def features(self, x, batch_size: int = 256) -> np.ndarray:
        x = self._as_batch(x)
        stop = self.feature_layer
        out = [self.forward(x[i:i + batch_size], upto=stop) for i in range(0, len(x), batch_size)]
        return np.concatenate(out).astype(np.float32, copy=False)


@dataclass
class FeatureVector:
    values: np.ndarray
    source: str  # "depth" or "inertial"
    key: tuple = (0, 0, 0)


def extract_features(net: Network, image, source: str = "inertial", key=(0, 0, 0)) -> FeatureVector:
    """Penultimate (post-ReLU) activations for a single image."""
    if np.asarray(image).ndim == len(net.input_dims) + 1:
        raise tensor.ShapeError("extract_features takes a single image; use Network.features")
    return FeatureVector(net.features(image)[0], source, tuple(key))


def build_signal_net(num_classes: int, feature_width: int = DEFAULT_FEATURE_WIDTH,
                     seed: int = 0) -> Network:
    if num_classes < 2:
        raise NetworkBuildError("num_classes must be >= 2")
    layers = [conv(50), RELU, maxpool(), conv(100), RELU, maxpool(),
              fc(feature_width), RELU, fc(num_classes), SOFTMAX]
    net = Network(layers, (1, 24, 52))
    net.initialize(seed)
    return net


def build_depth_net(num_classes: int, input_hw: int = 64,
                    feature_width: int = DEFAULT_FEATURE_WIDTH, seed: int = 0) -> Network:
    if num_classes < 2:
        raise NetworkBuildError("num_classes must be >= 2")
    if input_hw < 16:
        raise NetworkBuildError(f"input_hw must be >= 16, got {input_hw}")
    layers = [conv(32), RELU, maxpool(), conv(64), RELU, maxpool(),
              fc(feature_width), RELU, fc(num_classes), SOFTMAX]
    net = Network(layers, (1, input_hw, input_hw))
    net.initialize(seed)
    return net


def save_network(net: Network, directory, meta: dict | None = None) -> None:
    """Checkpoint = ``model.json`` descriptor plus one ``.hart`` file per parameter."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in net.param_items():
        fname = name.replace(".", "_") + ".hart"
        tensor.save(arr, out / fname)
        files[name] = fname
    doc = {"input_dims": list(net.input_dims),
           "layers": [s.to_json() for s in net.layers],
           "params": files,
           "meta": meta or {}}
    (out / "model.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_network(directory) -> tuple[Network, dict]:
    src = Path(directory)
    doc = json.loads((src / "model.json").read_text())
    layers = [LayerSpec(**spec) for spec in doc["layers"]]
    params = [{} for _ in layers]
    for name, fname in doc["params"].items():
        layer, key = name.split(".")
        params[int(layer.removeprefix("layer"))][key] = tensor.load(src / fname)
    net = Network(layers, tuple(doc["input_dims"]), params)
    return net, doc.get("meta", {})
