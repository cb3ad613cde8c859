"""Model files: binary weights (``TGW1``) and the plain-text network layout.

Weights file, little-endian::

    b"TGW1"  u32 layer_count
    per layer:
        u8 kind  (1 conv, 2 batch norm, 3 relu, 4 max pool, 5 detection head)
        u16 name_length, UTF-8 name
        u32 ndims, ndims x u32 dims
        f32 payload

    dims / payload by kind:
        conv  [out, in, 3, 3, stride, padding]  weights (out*in*9), bias (out)
        bn    [channels]                        gamma, beta, mean, var, then f32 epsilon
        relu  []                                -
        pool  [2, 2]                            -
        head  [out, in, classes]                weights (out*in), bias (out)

Layout file, one layer per line, ``name kind key=value ...``::

    input input channels=3 height=224 width=224
    conv_1 conv out_channels=16 stride=1 padding=1
    bn_1 bn
    ReLU_1 relu
    pool_1 maxpool
    ...
    ReLU_5 relu feature=true
    yolo_head yolo classes=1 anchors=24x64,40x104,72x168

Blank lines and ``#`` comments are ignored.  Parameters come from the weights
file by layer name; keys in the layout are checked against them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .engine import (BatchNormParams, ConvLayer, MaxPoolLayer, NetworkSpec, ReLU,
                     reference_backbone)
from .errors import LengthError, ParseError, ShapeError
from .yolo import BOX_PARAMS, AnchorSet, DecodeConfig, YoloHead, detect

MAGIC = b"TGW1"
KIND_CONV, KIND_BN, KIND_RELU, KIND_POOL, KIND_HEAD = 1, 2, 3, 4, 5
LAYOUT_VERSION = "# thermoguard layout v1"


@dataclass(frozen=True)
class Model:
    net: NetworkSpec
    head: YoloHead

    @property
    def input_size(self) -> int:
        return self.net.input_shape[1]

    def detect(self, frame_tensor, cfg: DecodeConfig):
        return detect(frame_tensor, self.net, self.head, cfg)


# --- binary weights --------------------------------------------------------

def _f32(arr) -> bytes:
    return np.asarray(arr, dtype="<f4").ravel().tobytes()


def write_weights(layers: Sequence[Tuple[str, object]]) -> bytes:
    out = [MAGIC, struct.pack("<I", len(layers))]
    for name, layer in layers:
        raw_name = name.encode("utf-8")
        if isinstance(layer, ConvLayer):
            kind = KIND_CONV
            dims = [*layer.weights.shape, layer.stride, layer.padding]
            payload = _f32(layer.weights) + _f32(layer.bias)
        elif isinstance(layer, BatchNormParams):
            kind, dims = KIND_BN, [layer.channels]
            payload = (_f32(layer.gamma) + _f32(layer.beta) + _f32(layer.running_mean)
                       + _f32(layer.running_var) + struct.pack("<f", layer.epsilon))
        elif isinstance(layer, ReLU):
            kind, dims, payload = KIND_RELU, [], b""
        elif isinstance(layer, MaxPoolLayer):
            kind, dims, payload = KIND_POOL, [2, 2], b""
        elif isinstance(layer, YoloHead):
            kind = KIND_HEAD
            dims = [*layer.weights.shape, layer.num_classes]
            payload = _f32(layer.weights) + _f32(layer.bias)
        else:
            raise TypeError(f"cannot serialise layer type {type(layer).__name__}")
        out.append(struct.pack("<BH", kind, len(raw_name)) + raw_name)
        out.append(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        out.append(payload)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise LengthError(
                f"weights file truncated reading {what} at byte {self.pos} "
                f"(need {n}, have {len(self.data) - self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float32)


def read_weights(data: bytes) -> List[Tuple[str, object]]:
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise ParseError(f"not a weights file (magic {data[:4]!r})", 0)
    (count,) = r.unpack("<I", "layer count")
    layers = []
    for _ in range(count):
        start = r.pos
        kind, name_len = r.unpack("<BH", "layer tag")
        try:
            name = r.take(name_len, "layer name").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("layer name is not valid UTF-8", start + 3) from None
        (ndims,) = r.unpack("<I", f"{name} dimension count")
        dims = r.unpack(f"<{ndims}I", f"{name} dimensions")
        try:
            layers.append((name, _decode_layer(r, kind, dims, name, start)))
        except ShapeError as exc:
            raise ParseError(f"layer {name!r}: {exc}", start) from None
    if r.pos != len(r.data):
        raise ParseError(f"{len(r.data) - r.pos} trailing bytes after last layer", r.pos)
    return layers


def _decode_layer(r: _Reader, kind: int, dims, name: str, start: int):
    if kind == KIND_CONV:
        if len(dims) != 6:
            raise ParseError(f"conv {name!r} needs 6 dims, got {len(dims)}", start)
        out_c, in_c, kh, kw, stride, padding = dims
        w = r.floats(out_c * in_c * kh * kw, f"{name} weights").reshape(out_c, in_c, kh, kw)
        return ConvLayer(w, r.floats(out_c, f"{name} bias"), stride, padding)
    if kind == KIND_BN:
        if len(dims) != 1:
            raise ParseError(f"batch norm {name!r} needs 1 dim, got {len(dims)}", start)
        (c,) = dims
        arrays = [r.floats(c, f"{name} {part}") for part in ("gamma", "beta", "mean", "var")]
        (eps,) = r.unpack("<f", f"{name} epsilon")
        return BatchNormParams(*arrays, epsilon=float(eps))
    if kind == KIND_RELU:
        return ReLU()
    if kind == KIND_POOL:
        return MaxPoolLayer(tuple(dims[:2]) or (2, 2), tuple(dims[:2]) or (2, 2))
    if kind == KIND_HEAD:
        if len(dims) != 3:
            raise ParseError(f"head {name!r} needs 3 dims, got {len(dims)}", start)
        out_c, in_c, classes = dims
        per_anchor = BOX_PARAMS + classes
        if classes < 1 or out_c % per_anchor:
            raise ParseError(f"head {name!r}: {out_c} outputs not a multiple of {per_anchor}", start)
        w = r.floats(out_c * in_c, f"{name} weights").reshape(out_c, in_c)
        b = r.floats(out_c, f"{name} bias")
        # anchors come from the layout file; placeholder of the right count
        anchors = AnchorSet(((1.0, 1.0),) * (out_c // per_anchor))
        return YoloHead(w, b, anchors, classes)
    raise ParseError(f"unknown layer kind {kind}", start)


# --- text layout -----------------------------------------------------------

def _parse_anchors(text: str, lineno: int) -> AnchorSet:
    try:
        pairs = [tuple(float(v) for v in a.lower().split("x")) for a in text.split(",")]
        if any(len(p) != 2 for p in pairs):
            raise ValueError
        return AnchorSet(tuple(pairs))
    except ValueError:
        raise ParseError(f"layout line {lineno}: bad anchors {text!r}") from None


def _truthy(v: str) -> bool:
    return v.lower() in ("1", "true", "yes", "on")


_LAYER_KEYS = {
    "input": {"channels", "height", "width"},
    "conv": {"out_channels", "in_channels", "stride", "padding", "feature"},
    "bn": {"eps", "channels", "feature"},
    "relu": {"feature"},
    "maxpool": {"feature"},
    "yolo": {"anchors", "classes"},
}
_KIND_ALIASES = {"batchnorm": "bn", "pool": "maxpool", "convolution": "conv", "head": "yolo"}
_KIND_CLASS = {"conv": ConvLayer, "bn": BatchNormParams, "relu": ReLU, "maxpool": MaxPoolLayer}


def build_model(layout: str, weights: Sequence[Tuple[str, object]]) -> Model:
    """Assemble a model from layout text and decoded weight records."""
    params: Dict[str, object] = {}
    for name, layer in weights:
        if name in params:
            raise ParseError(f"duplicate layer {name!r} in weights file")
        params[name] = layer
    input_shape = (3, 224, 224)
    layers = []
    feature = None
    head = None
    for lineno, raw in enumerate(layout.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"layout line {lineno}: expected 'name kind key=value...'")
        name, kind = parts[0], _KIND_ALIASES.get(parts[1].lower(), parts[1].lower())
        if kind not in _LAYER_KEYS:
            raise ParseError(f"layout line {lineno}: unknown layer kind {parts[1]!r}")
        opts = {}
        for item in parts[2:]:
            key, sep, value = item.partition("=")
            if not sep or key not in _LAYER_KEYS[kind]:
                raise ParseError(f"layout line {lineno}: unexpected option {item!r} for {kind}")
            opts[key] = value
        try:
            if kind == "input":
                input_shape = tuple(int(opts.get(k, d)) for k, d in
                                    (("channels", 3), ("height", 224), ("width", 224)))
                continue
            if kind == "yolo":
                head = _layout_head(name, opts, params, lineno)
                continue
            layer = params.get(name)
            if layer is None:
                if kind in ("relu", "maxpool"):
                    layer = _KIND_CLASS[kind]()
                else:
                    raise ParseError(f"layout line {lineno}: no weights for layer {name!r}")
            if not isinstance(layer, _KIND_CLASS[kind]):
                raise ParseError(f"layout line {lineno}: {name!r} is {type(layer).__name__} "
                                 f"in the weights file, layout says {kind}")
            _check_opts(layer, kind, opts, lineno)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"layout line {lineno}: {exc}") from None
        if _truthy(opts.get("feature", "false")):
            feature = name
        layers.append((name, layer))
    if head is None:
        raise ParseError("layout has no yolo head line")
    try:
        net = NetworkSpec(tuple(layers), feature, input_shape)
    except ShapeError as exc:
        raise ParseError(f"inconsistent layout: {exc}") from None
    if net.feature_shape[0] != head.in_channels:
        raise ParseError(f"head expects {head.in_channels} channels, feature layer "
                         f"{net.feature_layer_name!r} gives {net.feature_shape[0]}")
    return Model(net, head)


def _check_opts(layer, kind, opts, lineno):
    expected = {}
    if kind == "conv":
        expected = {"out_channels": layer.out_channels, "in_channels": layer.in_channels,
                    "stride": layer.stride, "padding": layer.padding}
    elif kind == "bn":
        expected = {"channels": layer.channels}
    for key, want in expected.items():
        if key in opts and int(opts[key]) != want:
            raise ParseError(f"layout line {lineno}: {key}={opts[key]} but weights have {want}")
    if kind == "bn" and "eps" in opts and not np.isclose(float(opts["eps"]), layer.epsilon,
                                                         rtol=1e-6):
        raise ParseError(f"layout line {lineno}: eps={opts['eps']} but weights have {layer.epsilon}")


def _layout_head(name, opts, params, lineno) -> YoloHead:
    stored = params.get(name)
    if not isinstance(stored, YoloHead):
        raise ParseError(f"layout line {lineno}: no head weights for {name!r}")
    classes = int(opts.get("classes", stored.num_classes))
    if classes != stored.num_classes:
        raise ParseError(f"layout line {lineno}: classes={classes} but weights have "
                         f"{stored.num_classes}")
    anchors = _parse_anchors(opts["anchors"], lineno) if "anchors" in opts else AnchorSet()
    if len(anchors) != len(stored.anchors):
        raise ParseError(f"layout line {lineno}: {len(anchors)} anchors but head weights "
                         f"encode {len(stored.anchors)}")
    return YoloHead(stored.weights, stored.bias, anchors, classes)


def layout_text(model: Model, head_name: str = "yolo_head") -> str:
    net = model.net
    c, h, w = net.input_shape
    lines = [LAYOUT_VERSION, f"input input channels={c} height={h} width={w}"]
    for name, layer in net.layers:
        if isinstance(layer, ConvLayer):
            line = (f"{name} conv out_channels={layer.out_channels} in_channels={layer.in_channels}"
                    f" stride={layer.stride} padding={layer.padding}")
        elif isinstance(layer, BatchNormParams):
            line = f"{name} bn channels={layer.channels} eps={layer.epsilon:g}"
        elif isinstance(layer, ReLU):
            line = f"{name} relu"
        else:
            line = f"{name} maxpool"
        if name == net.feature_layer_name:
            line += " feature=true"
        lines.append(line)
    anchors = ",".join(f"{aw:g}x{ah:g}" for aw, ah in model.head.anchors.anchors)
    lines.append(f"{head_name} yolo classes={model.head.num_classes} anchors={anchors}")
    return "\n".join(lines) + "\n"


def model_weights(model: Model, head_name: str = "yolo_head") -> bytes:
    return write_weights(list(model.net.layers) + [(head_name, model.head)])


def save_model(model: Model, weights_path, layout_path, head_name: str = "yolo_head"):
    Path(weights_path).write_bytes(model_weights(model, head_name))
    Path(layout_path).write_text(layout_text(model, head_name))


def load_model(weights_path, layout_path) -> Model:
    return build_model(Path(layout_path).read_text(), read_weights(Path(weights_path).read_bytes()))


def reference_model(seed: int = 0, anchors: AnchorSet = AnchorSet(), num_classes: int = 1,
                    head_scale: float = 0.05) -> Model:
    """Reference backbone plus a small random 1x1 head (untrained)."""
    net = reference_backbone(seed)
    rng = np.random.default_rng(seed + 1)
    out_c = len(anchors) * (BOX_PARAMS + num_classes)
    w = rng.normal(0.0, head_scale, size=(out_c, net.feature_shape[0]))
    return Model(net, YoloHead(w, np.zeros(out_c), anchors, num_classes))
