"""Forward-pass engine for the detection backbone.

Tensors are plain ``numpy`` arrays of dtype float32 in (channels, height, width)
layout.  Every operation returns a fresh read-only array, so activations can be
shared between threads without copying.  Per output element, sums are
accumulated in float64 and rounded to float32 once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, ShapeError, ThermoguardError

KERNEL = 3
POOL = 2
INPUT_NAME = "input"
DEFAULT_FEATURE_LAYER = "ReLU_5"
DEFAULT_INPUT_SHAPE = (3, 224, 224)


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to an immutable float32 (C, H, W) tensor.

    ``data`` may be a nested sequence / array already in (C, H, W) layout, or a
    flat sequence together with ``shape``.
    """
    arr = np.array(data, dtype=np.float32)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape) or len(shape) != 3:
            raise ShapeError(f"tensor shape must be 3 non-negative ints, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"data length {arr.size} does not match shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim != 3:
        raise ShapeError(f"tensor must be 3-D (C, H, W), got ndim={arr.ndim}")
    arr.flags.writeable = False
    return arr


def image_to_tensor(image) -> np.ndarray:
    """Convert a channels-last (H, W, C) image to a (C, H, W) tensor."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"image must be (H, W) or (H, W, C), got shape {img.shape}")
    return as_tensor(np.ascontiguousarray(img.transpose(2, 0, 1)))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ConvLayer:
    """3x3 convolution. ``weights`` has shape (out_channels, in_channels, 3, 3)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.bias).reshape(-1)
        if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(f"conv weights must be (out, in, 3, 3), got {w.shape}")
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError(f"conv weights need positive channel counts, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv bias length {b.size} != out_channels {w.shape[0]}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        p, s = self.padding, self.stride
        return (h + 2 * p - KERNEL) // s + 1, (w + 2 * p - KERNEL) // s + 1


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        arrays = {}
        for name in ("gamma", "beta", "running_mean", "running_var"):
            arrays[name] = _frozen(getattr(self, name)).reshape(-1)
        sizes = {a.size for a in arrays.values()}
        if len(sizes) != 1:
            raise ShapeError(f"batch-norm arrays differ in length: {sorted(sizes)}")
        if np.any(arrays["running_var"] < 0):
            raise ShapeError("batch-norm running_var must be >= 0")
        if not self.epsilon > 0:
            raise ShapeError(f"batch-norm epsilon must be > 0, got {self.epsilon}")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        # stored as f32 like every other parameter, so saved models reload bit-identical
        object.__setattr__(self, "epsilon", float(np.float32(self.epsilon)))

    @property
    def channels(self) -> int:
        return self.gamma.size

    @classmethod
    def identity(cls, channels: int, epsilon: float = 1e-5) -> "BatchNormParams":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels),
                   np.ones(channels), epsilon)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPoolLayer:
    """2x2 window, stride 2. Both are fixed."""

    window: Tuple[int, int] = (POOL, POOL)
    stride: Tuple[int, int] = (POOL, POOL)

    def __post_init__(self):
        if tuple(self.window) != (POOL, POOL) or tuple(self.stride) != (POOL, POOL):
            raise ShapeError("max pooling supports only a 2x2 window with stride 2")


Layer = Union[ConvLayer, BatchNormParams, ReLU, MaxPoolLayer]


def conv2d(input: np.ndarray, layer: ConvLayer) -> np.ndarray:
    c, h, w = input.shape
    if c != layer.in_channels:
        raise ShapeError(
            f"conv expects {layer.in_channels} input channels, got {c}")
    p, s = layer.padding, layer.stride
    if h + 2 * p < KERNEL or w + 2 * p < KERNEL:
        raise DegenerateInputError(
            f"input {h}x{w} with padding {p} is smaller than the 3x3 kernel")
    out_h, out_w = layer.output_hw(h, w)
    if out_h < 1 or out_w < 1:
        raise DegenerateInputError(f"conv output would be {out_h}x{out_w}")

    padded = np.pad(np.asarray(input, dtype=np.float64), ((0, 0), (p, p), (p, p)))
    # (C, out_h, out_w, 3, 3) view over every kernel position
    win = sliding_window_view(padded, (KERNEL, KERNEL), axis=(1, 2))[:, ::s, ::s]
    win = win[:, :out_h, :out_w]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * KERNEL * KERNEL, -1)
    kernel = layer.weights.astype(np.float64).reshape(layer.out_channels, -1)
    out = kernel @ cols + layer.bias.astype(np.float64)[:, None]
    return _frozen(out.reshape(layer.out_channels, out_h, out_w))


def batch_norm(input: np.ndarray, params: BatchNormParams) -> np.ndarray:
    if input.shape[0] != params.channels:
        raise ShapeError(
            f"batch norm has {params.channels} channels, input has {input.shape[0]}")
    x = np.asarray(input, dtype=np.float64)
    scale = params.gamma.astype(np.float64) / np.sqrt(
        params.running_var.astype(np.float64) + float(params.epsilon))
    y = (x - params.running_mean.astype(np.float64)[:, None, None]) * scale[:, None, None]
    y += params.beta.astype(np.float64)[:, None, None]
    return _frozen(y)


def relu(input: np.ndarray) -> np.ndarray:
    x = np.asarray(input, dtype=np.float32)
    return _frozen(np.where(x > 0, x, np.float32(0)))


def max_pool2(input: np.ndarray) -> np.ndarray:
    c, h, w = input.shape
    if h < POOL or w < POOL:
        raise DegenerateInputError(f"max pooling needs at least 2x2 input, got {h}x{w}")
    oh, ow = h // POOL, w // POOL
    x = np.asarray(input, dtype=np.float32)[:, : oh * POOL, : ow * POOL]
    return _frozen(x.reshape(c, oh, POOL, ow, POOL).max(axis=(2, 4)))


def apply_layer(x: np.ndarray, layer: Layer) -> np.ndarray:
    if isinstance(layer, ConvLayer):
        return conv2d(x, layer)
    if isinstance(layer, BatchNormParams):
        return batch_norm(x, layer)
    if isinstance(layer, ReLU):
        return relu(x)
    if isinstance(layer, MaxPoolLayer):
        return max_pool2(x)
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


def layer_output_shape(shape: Tuple[int, int, int], layer: Layer) -> Tuple[int, int, int]:
    """Shape recurrence for a single layer, without running it."""
    c, h, w = shape
    if isinstance(layer, ConvLayer):
        if c != layer.in_channels:
            raise ShapeError(f"conv expects {layer.in_channels} input channels, got {c}")
        p = layer.padding
        out_h, out_w = layer.output_hw(h, w)
        if h + 2 * p < KERNEL or w + 2 * p < KERNEL or out_h < 1 or out_w < 1:
            raise DegenerateInputError(f"conv on {h}x{w} input would be empty")
        return (layer.out_channels, out_h, out_w)
    if isinstance(layer, BatchNormParams):
        if c != layer.channels:
            raise ShapeError(f"batch norm has {layer.channels} channels, input has {c}")
        return shape
    if isinstance(layer, MaxPoolLayer):
        if h < POOL or w < POOL:
            raise DegenerateInputError(f"max pooling needs at least 2x2 input, got {h}x{w}")
        return (c, h // POOL, w // POOL)
    return shape


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered, named layers plus the name of the feature-extraction layer.

    When ``feature_layer_name`` is None it resolves to ``ReLU_5`` if such a layer
    exists, to ``"input"`` for an empty network, and to the last layer otherwise.
    """

    layers: Tuple[Tuple[str, Layer], ...] = ()
    feature_layer_name: Optional[str] = None
    input_shape: Tuple[int, int, int] = DEFAULT_INPUT_SHAPE

    def __post_init__(self):
        layers = tuple((str(n), l) for n, l in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        names = [n for n, _ in layers]
        if len(set(names)) != len(names) or INPUT_NAME in names:
            raise ShapeError(f"layer names must be unique and not {INPUT_NAME!r}: {names}")
        feature = self.feature_layer_name
        if feature is None:
            if DEFAULT_FEATURE_LAYER in names:
                feature = DEFAULT_FEATURE_LAYER
            else:
                feature = names[-1] if names else INPUT_NAME
        if feature != INPUT_NAME and feature not in names:
            raise ShapeError(f"feature layer {feature!r} is not a layer of the network")
        object.__setattr__(self, "feature_layer_name", feature)
        self.shape_trace()

    def shape_trace(self) -> Dict[str, Tuple[int, int, int]]:
        """Output shape of every layer, from the declared input shape."""
        trace = {INPUT_NAME: self.input_shape}
        shape = self.input_shape
        for name, layer in self.layers:
            try:
                shape = layer_output_shape(shape, layer)
            except ThermoguardError as exc:
                raise _with_layer(exc, name) from exc
            trace[name] = shape
        return trace

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        return self.shape_trace()[self.feature_layer_name]


def _with_layer(exc: ThermoguardError, name: str) -> ThermoguardError:
    new = type(exc).__new__(type(exc))
    new.__dict__.update(exc.__dict__)
    new.args = (f"layer {name!r}: {exc}",)
    new.layer_name = name
    return new


def forward(net: NetworkSpec, input: np.ndarray):
    """Run ``net`` on ``input``.

    Returns ``(activations, feature)`` where ``activations`` maps ``"input"``
    and every layer name to its output tensor.
    """
    x = as_tensor(input)
    if x.shape != net.input_shape:
        raise ShapeError(f"network expects input {net.input_shape}, got {x.shape}")
    activations = {INPUT_NAME: x}
    for name, layer in net.layers:
        try:
            x = apply_layer(x, layer)
        except ThermoguardError as exc:
            raise _with_layer(exc, name) from exc
        activations[name] = x
    return activations, activations[net.feature_layer_name]


def fold_batchnorm(conv: ConvLayer, bn: BatchNormParams) -> ConvLayer:
    """Merge a batch-norm that follows ``conv`` into the conv's weights and bias."""
    if bn.channels != conv.out_channels:
        raise ShapeError(
            f"batch norm has {bn.channels} channels, conv has {conv.out_channels} outputs")
    scale = bn.gamma.astype(np.float64) / np.sqrt(
        bn.running_var.astype(np.float64) + float(bn.epsilon))
    weights = conv.weights.astype(np.float64) * scale[:, None, None, None]
    bias = (conv.bias.astype(np.float64) - bn.running_mean) * scale + bn.beta
    return ConvLayer(weights, bias, conv.stride, conv.padding)


def fold_network(net: NetworkSpec) -> NetworkSpec:
    """Fold every conv immediately followed by a batch norm.

    The batch-norm layer disappears; the conv keeps its name.  If the feature
    layer was a folded batch norm, the conv takes over that role.
    """
    out = []
    feature = net.feature_layer_name
    i = 0
    layers = net.layers
    while i < len(layers):
        name, layer = layers[i]
        if (isinstance(layer, ConvLayer) and i + 1 < len(layers)
                and isinstance(layers[i + 1][1], BatchNormParams)):
            bn_name, bn = layers[i + 1]
            out.append((name, fold_batchnorm(layer, bn)))
            if feature == bn_name:
                feature = name
            i += 2
            continue
        out.append((name, layer))
        i += 1
    return NetworkSpec(tuple(out), feature, net.input_shape)


# Filter counts for the five conv stages of the reference backbone.
REFERENCE_CHANNELS = (16, 32, 64, 128, 256)


def reference_backbone(seed: int = 0, input_shape=DEFAULT_INPUT_SHAPE) -> NetworkSpec:
    """Reconstructed reference backbone with seeded random parameters.

    Conv-BN-ReLU-Pool four times, then Conv-BN-ReLU with the last ReLU named
    ``ReLU_5``: 19 layers, stride 16.  The weights are He-initialised noise,
    not a trained model.
    """
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = input_shape[0]
    for stage, out_ch in enumerate(REFERENCE_CHANNELS, start=1):
        fan_in = in_ch * KERNEL * KERNEL
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, KERNEL, KERNEL))
        layers.append((f"conv_{stage}", ConvLayer(w, np.zeros(out_ch))))
        layers.append((f"bn_{stage}", BatchNormParams(
            gamma=rng.uniform(0.5, 1.5, out_ch),
            beta=rng.normal(0.0, 0.1, out_ch),
            running_mean=rng.normal(0.0, 0.1, out_ch),
            running_var=rng.uniform(0.5, 1.5, out_ch),
        )))
        layers.append((f"ReLU_{stage}", ReLU()))
        if stage < len(REFERENCE_CHANNELS):
            layers.append((f"pool_{stage}", MaxPoolLayer()))
        in_ch = out_ch
    return NetworkSpec(tuple(layers), DEFAULT_FEATURE_LAYER, input_shape)
