"""The five classifier architectures, prediction and checkpoints."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CheckpointError, ShapeMismatch, UnknownArchitecture, UnsupportedShape
from .fsutil import atomic_write
from .nn import (
    BLSTM,
    LSTM,
    ChannelsLast,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2D,
    ReLU,
    Standardize,
    ToSequence,
    softmax,
)

ARCHITECTURES = ("mlp", "cnn", "lstm", "cnn+lstm", "cnn+blstm")
DISPLAY_NAMES = {"mlp": "MLP", "cnn": "CNN", "lstm": "LSTM", "cnn+lstm": "CNN+LSTM", "cnn+blstm": "CNN+BLSTM"}

CONV_CHANNELS = (16, 32, 64, 128)
CONV_KERNEL = 2
MLP_WIDTH = 300
LSTM_WIDTH = 64
HYBRID_DENSE_WIDTH = 64
# conv features feeding an LSTM carry a large common offset that saturates the
# gates when the raw dB-scale MFCCs go in unscaled
STANDARDIZED_BY_DEFAULT = frozenset({"cnn+lstm", "cnn+blstm"})


def canonical_architecture(name: str) -> str:
    key = name.strip().lower().replace("_", "+")
    if key not in ARCHITECTURES:
        raise UnknownArchitecture(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    return key


def default_input_shape(architecture: str, n_coefficients: int = 40, frames: int = 174):
    if canonical_architecture(architecture) == "mlp":
        return (n_coefficients,)
    return (1, n_coefficients, frames)


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    class_count: int = 20
    input_shape: Optional[Tuple[int, ...]] = None
    dropout_rate: float = 0.2
    seed: int = 0
    # None picks the architecture default from STANDARDIZED_BY_DEFAULT
    standardize: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "architecture", canonical_architecture(self.architecture))
        if self.input_shape is None:
            object.__setattr__(self, "input_shape", default_input_shape(self.architecture))
        else:
            object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.standardize is None:
            object.__setattr__(self, "standardize", self.architecture in STANDARDIZED_BY_DEFAULT)
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["architecture"], int(d["class_count"]), tuple(d["input_shape"]),
                   float(d["dropout_rate"]), int(d["seed"]), d.get("standardize"))


@dataclass
class Model:
    spec: ModelSpec
    layers: List[Layer]
    shapes: List[Tuple[int, ...]] = field(default_factory=list)

    def forward(self, x, training=False, rng=None):
        """Logits for a batch; softmax is applied by the caller or the loss."""
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeMismatch(f"model expects (N, {self.spec.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return g

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.params.items()}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.grads.items()}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.buffers.items()}

    def state(self) -> Dict[str, np.ndarray]:
        """Everything a checkpoint must restore: parameters, then buffers."""
        return {**self.parameters(), **self.buffers()}

    def fit_input_stats(self, x) -> None:
        """Fit the leading Standardize layer, if any, on training inputs."""
        if self.layers and isinstance(self.layers[0], Standardize):
            self.layers[0].fit(x)

    def clear(self) -> None:
        for layer in self.layers:
            layer.clear()

    def predict_proba(self, x, batch_size=256):
        x = np.asarray(x, dtype=np.float64)
        out = [softmax(self.forward(x[s:s + batch_size])) for s in range(0, len(x), batch_size)]
        self.clear()
        return np.concatenate(out) if out else np.zeros((0, self.spec.class_count))

    def summary(self) -> str:
        rows = [f"{self.spec.architecture}: input {self.spec.input_shape}"]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            rows.append(f"  {layer!r:<32} -> {shape}  ({layer.n_params()} params)")
        rows.append(f"  total params: {param_count(self)}")
        return "\n".join(rows)


def _conv_stack(layers, rng, drop, pool_last: bool):
    layers.append(ChannelsLast())
    c_in = 1
    for block, c_out in enumerate(CONV_CHANNELS):
        layers.append(Conv2D(c_in, c_out, CONV_KERNEL, rng=rng, input_grad=block > 0))
        if block < len(CONV_CHANNELS) - 1 or pool_last:
            # relu(maxpool(x)) == maxpool(relu(x)), gradients included; pooling
            # first applies the ReLU to a map four times smaller
            layers += [MaxPool2D(2), ReLU()]
        else:
            layers += [ReLU(), GlobalAvgPool()]
        layers.append(Dropout(drop))
        c_in = c_out


def build_model(spec: ModelSpec) -> Model:
    """Instantiate one of the five architectures with Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(spec.seed)
    drop, k = spec.dropout_rate, spec.class_count
    shape = spec.input_shape
    arch = spec.architecture
    layers: List[Layer] = []
    if spec.standardize:
        # per-feature for the MLP vector, per-coefficient for the MFCC image
        layers.append(Standardize(shape, reduce_axes=() if len(shape) == 1 else (0, 2)))

    if arch == "mlp":
        if len(shape) != 1:
            raise UnsupportedShape(f"MLP takes a feature vector, got {shape}")
        layers += [Dense(shape[0], MLP_WIDTH, rng), ReLU(), Dropout(drop),
                   Dense(MLP_WIDTH, MLP_WIDTH, rng), ReLU(), Dropout(drop),
                   Dense(MLP_WIDTH, k, rng)]
    elif arch == "lstm":
        if len(shape) != 3 or shape[0] != 1:
            raise UnsupportedShape(f"LSTM takes (1, coefficients, frames), got {shape}")
        _, n_coef, frames = shape
        layers += [ChannelsLast(), ToSequence(), LSTM(n_coef, LSTM_WIDTH, return_sequences=True, rng=rng),
                   Dropout(drop), Flatten(), Dense(frames * LSTM_WIDTH, k, rng)]
    else:
        if len(shape) != 3 or shape[0] != 1:
            raise UnsupportedShape(f"{arch} takes (1, coefficients, frames), got {shape}")
        _conv_stack(layers, rng, drop, pool_last=arch != "cnn")
        if arch == "cnn":
            layers.append(Dense(CONV_CHANNELS[-1], k, rng))
        else:
            # feature width of the sequence is only known after the conv stack
            h, w, c = _propagate(shape, layers)[-1]
            layers.append(ToSequence())
            if arch == "cnn+lstm":
                layers += [LSTM(c * h, LSTM_WIDTH, return_sequences=False, rng=rng),
                           Dense(LSTM_WIDTH, HYBRID_DENSE_WIDTH, rng), ReLU(),
                           Dense(HYBRID_DENSE_WIDTH, k, rng)]
            else:
                layers += [BLSTM(c * h, LSTM_WIDTH, rng=rng), Flatten(),
                           Dense(w * 2 * LSTM_WIDTH, k, rng)]

    shapes = _propagate(shape, layers)
    if shapes[-1] != (k,):
        raise UnsupportedShape(f"final output {shapes[-1]} != ({k},)")
    return Model(spec, layers, shapes)


def _propagate(shape, layers):
    shapes = [tuple(shape)]
    for layer in layers:
        try:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        except ShapeMismatch as exc:
            raise UnsupportedShape(str(exc)) from exc
    return shapes


def param_count(model: Model) -> int:
    return int(sum(p.size for p in model.parameters().values()))


def predict(model: Model, features) -> Tuple[int, np.ndarray]:
    """Class index (lowest index wins ties) and probabilities for one example."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != model.spec.input_shape:
        raise ShapeMismatch(f"expected features of shape {model.spec.input_shape}, got {x.shape}")
    probs = softmax(model.forward(x[None]))[0]
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Checkpoints

CKPT_MAGIC = b"ISOWCKPT"
CKPT_VERSION = 1


def checkpoint_bytes(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    arch = model.spec.architecture.encode()
    buf.write(struct.pack("<H", len(arch)) + arch)
    meta = json.dumps(model.spec.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)) + meta)
    params = model.state()
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        key = name.encode()
        buf.write(struct.pack("<H", len(key)) + key)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Model, path) -> None:
    atomic_write(path, checkpoint_bytes(model))


def model_from_checkpoint_bytes(data: bytes) -> Model:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<H", take(2))
    arch = bytes(take(n)).decode()
    (n,) = struct.unpack("<I", take(4))
    spec = ModelSpec.from_dict(json.loads(bytes(take(n)).decode()))
    if spec.architecture != canonical_architecture(arch):
        raise CheckpointError("architecture id disagrees with stored spec")
    model = build_model(spec)
    params = model.state()
    (count,) = struct.unpack("<I", take(4))
    if count != len(params):
        raise CheckpointError(f"checkpoint has {count} tensors, model has {len(params)}")
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = bytes(take(n)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        if name not in params or params[name].shape != shape:
            raise CheckpointError(f"tensor {name} {shape} does not fit the model")
        # in-place so tensors shared between a layer and its sub-layers stay linked
        np.copyto(params[name], values)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint")
    return model


def load_checkpoint(path) -> Model:
    return model_from_checkpoint_bytes(Path(path).read_bytes())
