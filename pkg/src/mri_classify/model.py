"""The VGG-19 backbone plus the appended dropout/dense prediction head.

The graph is a fixed sequence of named layers: five convolution blocks
(16 conv layers with ReLUs, a 2x2 max-pool after each block), three dense
layers with ReLU and dropout, an ``output`` marker for the 1000-unit
backbone logits, then the head: dropout(0.1) -> dense(1000) -> dropout(0.1)
-> dense(1000) -> dropout(0.1) -> dense(1). A sigmoid squashes the final
unit into a probability; 0.5 is the decision threshold.

``width`` scales every channel/feature count (the final single unit stays),
which keeps desk-scale training cheap while exercising the same code path
as the full-size network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UnknownLayerError
from .layers import (
    Conv2dParams,
    DenseParams,
    DropoutState,
    conv2d,
    dense,
    dropout,
    maxpool2d,
    relu,
    sigmoid,
)
from .seeding import derive_seed
from .tensor import Tensor, reshape

INPUT_SHAPE = (224, 224, 3)
HEAD_DROPOUT_RATE = 0.1
BACKBONE_DROPOUT_RATE = 0.5

# (block index, conv layers in block, output channels)
_CONV_BLOCKS = ((1, 2, 64), (2, 2, 128), (3, 4, 256), (4, 4, 512), (5, 4, 512))
# the first two pool names carry an underscore, the rest do not
_POOL_NAMES = {1: "maxpool_1", 2: "maxpool_2", 3: "maxpool3", 4: "maxpool4", 5: "maxpool5"}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # input|conv|relu|maxpool|dense|dropout|output
    name: str
    units: int = 0  # conv: out channels; dense: out features
    rate: float = 0.0  # dropout only


@dataclass
class WeightProvenance:
    """Where pretrained weights came from and which layers stay frozen."""

    source_domain: str
    target_domain: str
    frozen_layer_names: list[str] = field(default_factory=list)


def _scaled(units: int, width: float) -> int:
    return max(1, int(round(units * width)))


def layer_sequence(width: float = 1.0) -> list[LayerSpec]:
    """The full named layer sequence at the given width multiplier."""
    specs: list[LayerSpec] = []
    for block, n_convs, channels in _CONV_BLOCKS:
        c = _scaled(channels, width)
        for i in range(1, n_convs + 1):
            specs.append(LayerSpec("conv", f"conv{block}_{i}", units=c))
            specs.append(LayerSpec("relu", f"relu{block}_{i}"))
        specs.append(LayerSpec("maxpool", _POOL_NAMES[block]))
    d = _scaled(4096, width)
    k = _scaled(1000, width)
    specs += [
        LayerSpec("dense", "dense6", units=d),
        LayerSpec("relu", "relu6"),
        LayerSpec("dropout", "drop6", rate=BACKBONE_DROPOUT_RATE),
        LayerSpec("dense", "dense7", units=d),
        LayerSpec("relu", "relu7"),
        LayerSpec("dropout", "drop7", rate=BACKBONE_DROPOUT_RATE),
        LayerSpec("dense", "dense8", units=k),
        LayerSpec("output", "output"),
        LayerSpec("dropout", "dropout_9", rate=HEAD_DROPOUT_RATE),
        LayerSpec("dense", "dense_10", units=k),
        LayerSpec("dropout", "dropout_11", rate=HEAD_DROPOUT_RATE),
        LayerSpec("dense", "dense_12", units=k),
        LayerSpec("dropout", "dropout_13", rate=HEAD_DROPOUT_RATE),
        LayerSpec("dense", "dense_14", units=1),
    ]
    return specs


class ModelGraph:
    """Ordered layer specs plus their parameter store."""

    def __init__(self, layers: list[LayerSpec], params: dict[str, Conv2dParams | DenseParams]):
        self.layers = layers
        self.params = params
        self.head_start_index = next(
            i for i, s in enumerate(layers) if s.name == "dropout_9"
        )
        self.frozen_layers: set[str] = set()
        self.provenance: WeightProvenance | None = None

    # -- structure -----------------------------------------------------

    def layer_names(self) -> list[str]:
        return [s.name for s in self.layers]

    def parameterized_layers(self) -> list[str]:
        return [s.name for s in self.layers if s.kind in ("conv", "dense")]

    def base_layer_names(self) -> list[str]:
        """Parameterized layers before the head."""
        return [
            s.name
            for s in self.layers[: self.head_start_index]
            if s.kind in ("conv", "dense")
        ]

    def head_layer_names(self) -> list[str]:
        return [
            s.name
            for s in self.layers[self.head_start_index:]
            if s.kind in ("conv", "dense")
        ]

    def parameter_tensors(self, name: str) -> tuple[Tensor, Tensor]:
        """(weight-like, bias) pair for a parameterized layer."""
        p = self.params[name]
        if isinstance(p, Conv2dParams):
            return p.kernels, p.bias
        return p.weights, p.bias

    def parameter_count(self, names=None) -> int:
        names = self.parameterized_layers() if names is None else names
        total = 0
        for n in names:
            w, b = self.parameter_tensors(n)
            total += w.size + b.size
        return total

    # -- training surface ------------------------------------------------

    def set_trainable(self, frozen_layer_names) -> "ModelGraph":
        """Freeze the named layers: their parameters drop out of gradient
        updates. Every other parameterized layer becomes trainable."""
        frozen = set(frozen_layer_names)
        known = set(self.layer_names())
        unknown = frozen - known
        if unknown:
            raise UnknownLayerError(f"not layers of this model: {sorted(unknown)}")
        self.frozen_layers = frozen
        for name in self.parameterized_layers():
            trainable = name not in frozen
            w, b = self.parameter_tensors(name)
            w.requires_grad = trainable
            b.requires_grad = trainable
        if self.provenance is not None:
            self.provenance.frozen_layer_names = sorted(frozen & known)
        return self

    def trainable_parameters(self) -> list[Tensor]:
        out = []
        for name in self.parameterized_layers():
            if name in self.frozen_layers:
                continue
            w, b = self.parameter_tensors(name)
            out.extend([w, b])
        return out

    # -- forward ---------------------------------------------------------

    def forward(self, image, training: bool = False, step_seed: int = 0, trace=None) -> Tensor:
        """Run the graph on one image, returning the tumor probability as a
        [1, 1] tensor. Training mode activates dropout (masks derived from
        ``step_seed`` per layer) and records onto the active tape."""
        if isinstance(image, Tensor):
            x = image
        else:
            x = Tensor.from_array(image)
        if x.shape != INPUT_SHAPE:
            raise ShapeError(f"expected input shape {list(INPUT_SHAPE)}, got {list(x.shape)}")
        if trace is not None:
            trace.append(("input", x.shape))
        mode = "training" if training else "inference"
        for spec in self.layers:
            if spec.kind == "conv":
                x = conv2d(x, self.params[spec.name])
            elif spec.kind == "relu":
                x = relu(x)
            elif spec.kind == "maxpool":
                x = maxpool2d(x)
            elif spec.kind == "dense":
                if len(x.shape) == 3:
                    x = reshape(x, [1, x.size])
                x = dense(x, self.params[spec.name])
            elif spec.kind == "dropout":
                state = DropoutState(
                    rate=spec.rate, mode=mode, rng_seed=derive_seed(step_seed, spec.name)
                )
                x = dropout(x, state)
            elif spec.kind == "output":
                pass  # backbone logits marker; the head consumes them as-is
            if trace is not None:
                trace.append((spec.name, x.shape))
        return sigmoid(x)

    def predict_proba(self, image) -> float:
        """Deterministic inference probability for one image."""
        return self.forward(image, training=False).item()

    def shape_trace(self) -> list[tuple[str, tuple[int, ...]]]:
        """(name, output shape) for every layer, from a zero-image forward."""
        rows: list[tuple[str, tuple[int, ...]]] = []
        self.forward(Tensor(INPUT_SHAPE, 0.0), training=False, trace=rows)
        return rows


def build_model(seed: int, width: float = 1.0) -> ModelGraph:
    """Construct the graph with He-uniform weights and zero biases drawn
    deterministically from ``seed``."""
    specs = layer_sequence(width)
    params: dict[str, Conv2dParams | DenseParams] = {}
    in_channels = INPUT_SHAPE[2]
    flat_features = None
    spatial = INPUT_SHAPE[0]
    for spec in specs:
        if spec.kind == "conv":
            rng = np.random.default_rng(derive_seed(seed, "init", spec.name))
            fan_in = in_channels * 9
            bound = np.sqrt(6.0 / fan_in)
            kv = _uniform(rng, (spec.units, in_channels, 3, 3), bound)
            params[spec.name] = Conv2dParams(
                Tensor(kv.shape, kv, requires_grad=True),
                Tensor([spec.units], 0.0, requires_grad=True),
            )
            in_channels = spec.units
        elif spec.kind == "maxpool":
            spatial //= 2
        elif spec.kind == "dense":
            if flat_features is None:
                flat_features = spatial * spatial * in_channels
            rng = np.random.default_rng(derive_seed(seed, "init", spec.name))
            bound = np.sqrt(6.0 / flat_features)
            wv = _uniform(rng, (flat_features, spec.units), bound)
            params[spec.name] = DenseParams(
                Tensor(wv.shape, wv, requires_grad=True),
                Tensor([spec.units], 0.0, requires_grad=True),
            )
            flat_features = spec.units
    return ModelGraph(specs, params)


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return ((rng.random(shape, dtype=np.float32) * 2.0 - 1.0) * np.float32(bound)).astype(
        np.float32
    )


# Expected full-width forward trace, one row per layer. Maxpool3 must emit
# 28x28x256: pooling of a 56x56 map halves it, and conv4_1 consumes 28x28.
EXPECTED_FULL_TRACE: tuple[tuple[str, tuple[int, ...]], ...] = (
    ("input", (224, 224, 3)),
    ("conv1_1", (224, 224, 64)),
    ("relu1_1", (224, 224, 64)),
    ("conv1_2", (224, 224, 64)),
    ("relu1_2", (224, 224, 64)),
    ("maxpool_1", (112, 112, 64)),
    ("conv2_1", (112, 112, 128)),
    ("relu2_1", (112, 112, 128)),
    ("conv2_2", (112, 112, 128)),
    ("relu2_2", (112, 112, 128)),
    ("maxpool_2", (56, 56, 128)),
    ("conv3_1", (56, 56, 256)),
    ("relu3_1", (56, 56, 256)),
    ("conv3_2", (56, 56, 256)),
    ("relu3_2", (56, 56, 256)),
    ("conv3_3", (56, 56, 256)),
    ("relu3_3", (56, 56, 256)),
    ("conv3_4", (56, 56, 256)),
    ("relu3_4", (56, 56, 256)),
    ("maxpool3", (28, 28, 256)),
    ("conv4_1", (28, 28, 512)),
    ("relu4_1", (28, 28, 512)),
    ("conv4_2", (28, 28, 512)),
    ("relu4_2", (28, 28, 512)),
    ("conv4_3", (28, 28, 512)),
    ("relu4_3", (28, 28, 512)),
    ("conv4_4", (28, 28, 512)),
    ("relu4_4", (28, 28, 512)),
    ("maxpool4", (14, 14, 512)),
    ("conv5_1", (14, 14, 512)),
    ("relu5_1", (14, 14, 512)),
    ("conv5_2", (14, 14, 512)),
    ("relu5_2", (14, 14, 512)),
    ("conv5_3", (14, 14, 512)),
    ("relu5_3", (14, 14, 512)),
    ("conv5_4", (14, 14, 512)),
    ("relu5_4", (14, 14, 512)),
    ("maxpool5", (7, 7, 512)),
    ("dense6", (1, 4096)),
    ("relu6", (1, 4096)),
    ("drop6", (1, 4096)),
    ("dense7", (1, 4096)),
    ("relu7", (1, 4096)),
    ("drop7", (1, 4096)),
    ("dense8", (1, 1000)),
    ("output", (1, 1000)),
    ("dropout_9", (1, 1000)),
    ("dense_10", (1, 1000)),
    ("dropout_11", (1, 1000)),
    ("dense_12", (1, 1000)),
    ("dropout_13", (1, 1000)),
    ("dense_14", (1, 1)),
)
