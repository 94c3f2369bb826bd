import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import storage
from ..errors import FormatError, ShapeMismatchError
from .layers import build_layer

__all__ = ["NetworkSpec", "Network", "PRESETS", "preset", "load_checkpoint"]


@dataclass
class NetworkSpec:
    layers: list
    input_shape: tuple
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers = [dict(d) for d in self.layers]
        self.shapes()

    def shapes(self):
        """Per-layer output shapes; raises if the stack does not compose."""
        shape = self.input_shape
        out = []
        for desc in self.layers:
            layer = build_layer(desc)
            if desc["type"] in ("conv", "maxpool") and len(shape) != 3:
                raise ShapeMismatchError(f"{desc['type']} needs a (C, H, W) input, got {shape}")
            shape = layer.output_shape(shape)
            if any(d < 1 for d in shape):
                raise ShapeMismatchError(f"layer {desc} produces an empty output {shape}")
            out.append(shape)
        if out and out[-1] != (self.class_count,):
            raise ShapeMismatchError(f"final layer width {out[-1]} does not match {self.class_count} classes")
        return out

    def parameter_count(self):
        shape = self.input_shape
        total = 0
        for desc in self.layers:
            kind = desc["type"]
            if kind == "conv":
                total += desc["out_channels"] * shape[0] * desc["kernel"] ** 2 + desc["out_channels"]
            elif kind == "dense":
                total += int(np.prod(shape)) * desc["width"] + desc["width"]
            shape = build_layer(desc).output_shape(shape)
        return total

    def to_dict(self):
        return {"layers": self.layers, "input_shape": list(self.input_shape), "class_count": self.class_count}

    @classmethod
    def from_dict(cls, d):
        return cls(d["layers"], tuple(d["input_shape"]), d["class_count"])


def _lenet(c1, c2, fc, input_shape=(1, 28, 28), classes=10):
    return NetworkSpec(
        [
            {"type": "conv", "out_channels": c1, "kernel": 5},
            {"type": "relu"},
            {"type": "maxpool", "kernel": 2, "stride": 2, "padding": 1},
            {"type": "conv", "out_channels": c2, "kernel": 5},
            {"type": "relu"},
            {"type": "maxpool", "kernel": 2, "stride": 2, "padding": 1},
            {"type": "flatten"},
            {"type": "dense", "width": fc},
            {"type": "relu"},
            {"type": "dense", "width": classes},
        ],
        input_shape,
        classes,
    )


def _mlp(hidden, input_shape, classes):
    layers = [{"type": "flatten"}]
    for width in hidden:
        layers += [{"type": "dense", "width": width}, {"type": "relu"}]
    layers.append({"type": "dense", "width": classes})
    return NetworkSpec(layers, input_shape, classes)


# conv filters halve from one preset to the next, as in the LeNet-5 family
PRESETS = {
    "lenet-tiny": lambda shape=(1, 28, 28), classes=10: _lenet(8, 16, 64, shape, classes),
    "lenet-tiny-half": lambda shape=(1, 28, 28), classes=10: _lenet(4, 8, 32, shape, classes),
    "mlp-small": lambda shape, classes: _mlp([32, 32], shape, classes),
    "mlp-tiny": lambda shape, classes: _mlp([16], shape, classes),
}


def preset(name, input_shape=(1, 28, 28), class_count=10):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(tuple(input_shape), class_count)


class Network:
    """Layer stack over one flat parameter vector.

    ``parameters`` and ``gradients`` are contiguous arrays; every layer holds
    reshaped views into them, so optimisers can update the flat vector.
    """

    def __init__(self, spec, seed=0, dtype=np.float32, parameters=None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.mode = "eval"
        self.layers = [build_layer(d) for d in spec.layers]
        shapes = []
        shape = spec.input_shape
        for layer in self.layers:
            shapes.append(layer.param_shapes(shape))
            shape = layer.output_shape(shape)
        total = sum(int(np.prod(s)) for group in shapes for s in group)
        self.parameters = np.zeros(total, dtype=self.dtype)
        self.gradients = np.zeros(total, dtype=self.dtype)
        rng = np.random.default_rng(seed)
        offset = 0
        for layer, group in zip(self.layers, shapes):
            ps, gs = [], []
            for s in group:
                size = int(np.prod(s))
                ps.append(self.parameters[offset : offset + size].reshape(s))
                gs.append(self.gradients[offset : offset + size].reshape(s))
                offset += size
            layer.bind(ps, gs)
            if ps:
                scratch = [np.zeros(p.shape) for p in ps]
                layer.init(rng, scratch)
                for p, v in zip(ps, scratch):
                    p[...] = v
        if parameters is not None:
            parameters = np.asarray(parameters)
            if parameters.shape != self.parameters.shape:
                raise ShapeMismatchError(f"expected {self.parameters.size} parameters, got {parameters.size}")
            self.parameters[...] = parameters

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def forward(self, batch, train=None):
        train = (self.mode == "train") if train is None else train
        x = np.asarray(batch)
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeMismatchError(f"expected inputs of shape {self.spec.input_shape}, got {x.shape[1:]}")
        if len(x) == 0:
            return np.zeros((0, self.spec.class_count), dtype=self.dtype)
        x = x.astype(self.dtype, copy=False)
        if x.ndim == 4:
            x = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        """Backpropagate ``d loss / d activations``; fills ``self.gradients``."""
        g = np.asarray(grad, dtype=self.dtype)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        if g.ndim == 4:
            g = g.transpose(1, 0, 2, 3)
        return g

    def predict(self, batch, batch_size=1024):
        return np.argmax(self.activations(batch, batch_size), axis=1)

    def activations(self, batch, batch_size=1024):
        if len(batch) == 0:
            return np.zeros((0, self.spec.class_count), dtype=self.dtype)
        return np.concatenate([self.forward(batch[i : i + batch_size], train=False)
                               for i in range(0, len(batch), batch_size)])

    def copy(self):
        return Network(self.spec, self.seed, self.dtype, self.parameters.copy())

    def astype(self, dtype):
        return Network(self.spec, self.seed, dtype, self.parameters.astype(dtype))

    def save(self, stem, seed=None, epoch=None, extra=None):
        stem = Path(stem)
        if stem.suffix in (".json", ".bin"):
            stem = stem.with_suffix("")
        manifest = {
            "spec": self.spec.to_dict(),
            "seed": self.seed if seed is None else seed,
            "epoch": epoch,
            "dtype": "f32-le",
            "count": int(self.parameters.size),
        }
        if extra:
            manifest.update(extra)
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".bin").write_bytes(self.parameters.astype(storage.DTYPE).tobytes())
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return stem


def load_checkpoint(stem, dtype=np.float32):
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("dtype") != "f32-le":
        raise FormatError("checkpoint parameters must be f32-le")
    raw = stem.with_suffix(".bin").read_bytes()
    if len(raw) != 4 * manifest["count"]:
        raise FormatError(f"checkpoint blob holds {len(raw)} bytes, expected {4 * manifest['count']}")
    params = np.frombuffer(raw, dtype=storage.DTYPE).astype(dtype)
    spec = NetworkSpec.from_dict(manifest["spec"])
    net = Network(spec, manifest.get("seed", 0), dtype, params)
    net.checkpoint_info = manifest
    return net
