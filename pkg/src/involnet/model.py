"""Model variants (convolution-only, involution-only and the hybrid family),
the per-layer summary table, storage accounting and the ``.ivcn`` model
file format.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .involution import Involution, InvolutionSpec
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, InputLayer, MaxPool2D
from .tensor import DTYPE, make_rng

INPUT_SHAPE = (48, 48, 3)
MAX_INV_LAYERS = 6
KINDS = ("conv-only", "inv-only", "hybrid")
_KIND_TAG = {"conv-only": 0, "inv-only": 1, "hybrid": 2}

MAGIC = b"IVCN"
VERSION = 1


class ModelFormatError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ModelVariant:
    kind: str = "hybrid"
    inv_layers: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variant kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "conv-only" and self.inv_layers != 0:
            object.__setattr__(self, "inv_layers", 0)
        if self.kind == "inv-only" and self.inv_layers != 3:
            raise ValueError("inv-only variant has exactly 3 involution layers")
        if not 0 <= self.inv_layers <= MAX_INV_LAYERS:
            raise ValueError(f"inv_layers must be in 0..{MAX_INV_LAYERS}, got {self.inv_layers}")

    @classmethod
    def parse(cls, kind, inv_layers=None):
        if kind == "conv-only":
            return cls("conv-only", 0)
        if kind == "inv-only":
            return cls("inv-only", 3)
        return cls(kind, 3 if inv_layers is None else inv_layers)

    @property
    def label(self):
        if self.kind == "hybrid":
            return f"hybrid-{self.inv_layers}"
        return self.kind


@dataclass
class SummaryRow:
    name: str
    kind: str
    output_shape: tuple
    params: int
    aux_shape: tuple = None


@dataclass
class Summary:
    rows: list
    total: int
    trainable: int
    non_trainable: int

    def format(self):
        def shape_str(shape):
            return "(None, " + ", ".join(str(s) for s in shape) + ")"

        lines = [f"{'Layer (type)':<44}{'Output Shape':<48}{'Param #':>10}", "=" * 102]
        for row in self.rows:
            shape = shape_str(row.output_shape)
            if row.aux_shape is not None:
                shape = f"[{shape}, {shape_str(row.aux_shape)}]"
            lines.append(f"{row.name + ' (' + row.kind + ')':<44}{shape:<48}{row.params:>10,}")
        lines.append("=" * 102)
        lines.append(f"Total params: {self.total:,} ({storage_mb(self.total):.2f} MB)")
        lines.append(f"Trainable params: {self.trainable:,} ({storage_mb(self.trainable):.2f} MB)")
        lines.append(f"Non-trainable params: {self.non_trainable:,} "
                     f"({self.non_trainable * 4 / 1024:.2f} KB)")
        return "\n".join(lines)


class Model:
    """An ordered stack of layers with a shared forward/backward driver."""

    def __init__(self, variant, layers, input_shape=INPUT_SHAPE):
        self.variant = variant
        self.layers = layers
        self.input_shape = tuple(input_shape)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def predict(self, x, batch_size=256):
        outs = [self.forward(x[i:i + batch_size], train=False)
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def trainable(self):
        """Yield ``(layer, param_name)`` for every trainable tensor."""
        for layer in self.layers:
            for name in layer.trainable_names:
                yield layer, name

    def set_dropout_rng(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def involution_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Involution)]

    def state(self):
        return [(layer.name, [layer.params[k] for k in layer.params]) for layer in self.layers]


def build_model(variant, rng=None, seed=None):
    """Construct a variant. Weights come from ``rng`` or, failing that,
    the ``"init"`` stream of ``seed``; with neither, weights are zero."""
    if isinstance(variant, str):
        variant = ModelVariant.parse(variant)
    if rng is None and seed is not None:
        rng = make_rng(seed, "init")
    h, w, c = INPUT_SHAPE
    spec = InvolutionSpec(channels=c, kernel_size=3, groups=1, reduction_ratio=2)
    n_inv = variant.inv_layers

    layers = [InputLayer("input", INPUT_SHAPE)]
    for i in range(n_inv):
        layers.append(Involution(f"involution_{i + 1}", spec, rng=rng))

    if variant.kind == "inv-only":
        layers += [
            Flatten("flatten"),
            Dense("dense_1", h * w * c, 128, activation="relu", rng=rng),
        ]
    else:
        layers += [
            Conv2D("conv2d_1", c, 32, 3, rng=rng),
            MaxPool2D("max_pooling2d_1"),
            Conv2D("conv2d_2", 32, 64, 3, rng=rng),
            BatchNorm("batch_normalization_1", 64),
            MaxPool2D("max_pooling2d_2"),
            Conv2D("conv2d_3", 64, 128, 3, rng=rng),
            BatchNorm("batch_normalization_2", 128),
            MaxPool2D("max_pooling2d_3"),
            Flatten("flatten"),
            Dense("dense_1", 4 * 4 * 128, 128, activation="relu", rng=rng),
        ]
    layers += [
        Dropout("dropout", 0.1),
        Dense("dense_2", 128, 2, rng=rng),
    ]
    return Model(variant, layers)


def summarize(model):
    rows = []
    shape = model.input_shape
    total = trainable = frozen = 0
    for layer in model.layers:
        aux = layer.aux_shape(shape)
        shape = layer.output_shape(shape)
        t, tr, fr = layer.count_params()
        total, trainable, frozen = total + t, trainable + tr, frozen + fr
        rows.append(SummaryRow(layer.name, layer.kind, tuple(shape), t, aux))
    return Summary(rows, total, trainable, frozen)


def storage_mb(n_params):
    return n_params * 4 / 1024 ** 2


def storage_size_mb(model):
    """On-disk size of the weights at 4 bytes per parameter, in MiB."""
    return storage_mb(summarize(model).total)


# ---------------------------------------------------------------------------
# .ivcn file format (all integers little-endian)
#   "IVCN" | u32 version | u8 variant tag | u8 inv_layers | u16 layer count
#   per layer: u16 name length, UTF-8 name, u16 tensor count,
#     per tensor: u8 rank, u32 x rank dims, float32 payload
# ---------------------------------------------------------------------------

def model_to_bytes(model):
    out = [MAGIC, struct.pack("<IBBH", VERSION, _KIND_TAG[model.variant.kind],
                              model.variant.inv_layers, len(model.layers))]
    for layer in model.layers:
        name = layer.name.encode("utf-8")
        out.append(struct.pack("<H", len(name)) + name)
        out.append(struct.pack("<H", len(layer.params)))
        for arr in layer.params.values():
            out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, field):
        if self.pos + n > len(self.data):
            raise ModelFormatError(field, f"truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def model_from_bytes(data):
    rd = _Reader(data)
    if rd.take(4, "magic") != MAGIC:
        raise ModelFormatError("magic", "not an IVCN model file")
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise ModelFormatError("version", f"unsupported version {version}")
    tag, inv_layers, n_layers = rd.unpack("<BBH", "header")
    kinds = {v: k for k, v in _KIND_TAG.items()}
    if tag not in kinds:
        raise ModelFormatError("variant", f"unknown variant tag {tag}")
    try:
        variant = ModelVariant(kinds[tag], inv_layers)
    except ValueError as exc:
        raise ModelFormatError("inv_layers", str(exc)) from None

    model = build_model(variant)
    if n_layers != len(model.layers):
        raise ModelFormatError("layer_count", f"{n_layers} layers, variant has {len(model.layers)}")
    loaded = []
    for layer in model.layers:
        (name_len,) = rd.unpack("<H", f"{layer.name}.name")
        name = rd.take(name_len, f"{layer.name}.name").decode("utf-8", errors="replace")
        if name != layer.name:
            raise ModelFormatError("layer_name", f"expected {layer.name!r}, got {name!r}")
        (n_tensors,) = rd.unpack("<H", f"{name}.tensor_count")
        if n_tensors != len(layer.params):
            raise ModelFormatError(f"{name}.tensor_count",
                                   f"expected {len(layer.params)}, got {n_tensors}")
        tensors = {}
        for key, ref in layer.params.items():
            (rank,) = rd.unpack("<B", f"{name}.{key}.rank")
            dims = rd.unpack(f"<{rank}I", f"{name}.{key}.dims")
            if tuple(dims) != ref.shape:
                raise ModelFormatError(f"{name}.{key}.shape", f"expected {ref.shape}, got {dims}")
            payload = rd.take(4 * ref.size, f"{name}.{key}.payload")
            tensors[key] = np.frombuffer(payload, dtype="<f4").astype(DTYPE).reshape(dims)
        loaded.append((layer, tensors))
    if rd.pos != len(data):
        raise ModelFormatError("trailer", f"{len(data) - rd.pos} unexpected trailing bytes")
    # assign only once the whole file validated
    for layer, tensors in loaded:
        layer.params.update(tensors)
    return model


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
