# hargnn/models.py
"""
The three activity classifiers.

- `GcnAttentionModel`: one private GCN stack per sensor, inter-sensor
  self-attention per timestamp, mean pooling over time, linear head.
- `PlainGcnModel`: a single GCN over all channels, no sensor split.
- `RagnnModel`: per-sensor LSTM followed by per-sensor GAT layers over the
  path graph, flattened across nodes into a linear head.

Models are selected by kind through `get_model`.
"""

import logging
from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import layers
from . import numerics as nx
from .config_handler import ModelConfig
from .errors import CheckpointError, ConfigError, DimensionError
from .graph_builder import GraphBatch
from .numerics import TensorValue

Shape = Tuple[int, ...]


class Architecture(NamedTuple):
    """Everything needed to rebuild a model's parameter shapes."""
    model: ModelConfig
    sensor_dims: Tuple[int, ...]
    n_classes: int
    window_len: int

    @property
    def kind(self) -> str:
        return self.model.kind

    @property
    def n_channels(self) -> int:
        return int(sum(self.sensor_dims))

    def to_json(self) -> dict:
        return {
            "model": dict(self.model._asdict()),
            "sensor_dims": list(self.sensor_dims),
            "n_classes": self.n_classes,
            "window_len": self.window_len,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Architecture":
        try:
            model = ModelConfig(**data["model"])
            return cls(model, tuple(int(d) for d in data["sensor_dims"]), int(data["n_classes"]),
                       int(data["window_len"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"invalid architecture description: {e}") from None


def glorot_uniform(rng: np.random.Generator, shape: Shape) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --- Base Class ---
class HarModel(ABC):
    """
    Abstract base class for the classifiers.

    Subclasses declare their parameter shapes and implement `embed`, which
    returns the penultimate (pre-head) representation.
    """
    kind = ""

    def __init__(self, arch: Architecture, seed: int = 0):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.arch = arch
        self.params: "OrderedDict[str, TensorValue]" = OrderedDict()
        rng = np.random.default_rng(seed)
        for name, shape in self.expected_shapes().items():
            if name.endswith("bias"):
                data = np.zeros(shape)
            else:
                data = glorot_uniform(rng, shape)
            self.params[name] = TensorValue(data, requires_grad=True, name=name)
        self.logger.debug(f"Initialized {self.kind} with {self.parameter_count()} parameters.")

    @abstractmethod
    def expected_shapes(self) -> "OrderedDict[str, Shape]":
        """Ordered parameter names and shapes implied by the architecture."""

    @abstractmethod
    def embed(self, batch: GraphBatch) -> TensorValue:
        """B x features representation fed to the output layer."""

    def forward(self, batch: GraphBatch) -> TensorValue:
        """Class logits, B x C."""
        return layers.linear(self.embed(batch), self.params["head.w"], self.params["head.bias"])

    def predict_proba(self, batch: GraphBatch) -> np.ndarray:
        return layers.probabilities(self.forward(batch))

    def parameters(self) -> List[TensorValue]:
        return list(self.params.values())

    def named_parameters(self) -> "OrderedDict[str, TensorValue]":
        return self.params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def load_state(self, state: Mapping[str, np.ndarray]):
        """Replaces parameter values; names and shapes must match exactly."""
        expected = self.expected_shapes()
        if set(state) != set(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if tuple(arr.shape) != tuple(shape):
                raise CheckpointError(f"parameter {name} has shape {tuple(arr.shape)}, architecture needs {shape}")
            self.params[name].data = np.array(arr, copy=True)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data) for name, p in self.params.items())

    def _check_batch(self, batch: GraphBatch):
        dims = tuple(f.shape[-1] for f in batch.sensor_features)
        if dims != self.arch.sensor_dims:
            raise DimensionError(self.kind, dims, self.arch.sensor_dims, detail="sensor layout differs from model")


# --- Concrete Implementations ---

class GcnAttentionModel(HarModel):
    """Per-sensor GCN encoders fused by inter-sensor self-attention."""
    kind = "gcn_attention"

    def expected_shapes(self) -> "OrderedDict[str, Shape]":
        m = self.arch.model
        shapes: "OrderedDict[str, Shape]" = OrderedDict()
        for i, d_i in enumerate(self.arch.sensor_dims):
            for layer in range(m.gcn_layers):
                shapes[f"gcn.s{i}.w{layer}"] = (d_i if layer == 0 else m.hidden, m.hidden)
        for name in ("wq", "wk", "wv"):
            shapes[f"attention.{name}"] = (m.hidden, m.hidden)
        shapes["head.w"] = (len(self.arch.sensor_dims) * m.hidden, self.arch.n_classes)
        shapes["head.bias"] = (self.arch.n_classes,)
        return shapes

    def gcn_stacks(self) -> List[List[TensorValue]]:
        return [[self.params[f"gcn.s{i}.w{layer}"] for layer in range(self.arch.model.gcn_layers)]
                for i in range(len(self.arch.sensor_dims))]

    def encode(self, batch: GraphBatch) -> Tuple[TensorValue, Optional[TensorValue]]:
        """Returns (H̄ as B x t x n x d̂, attention maps or None when attention is disabled)."""
        self._check_batch(batch)
        feats = [TensorValue(f) for f in batch.sensor_features]
        hidden = layers.gcn_encoder(batch.norm_adjacency, feats, self.gcn_stacks())
        if not self.arch.model.attention_enabled:
            return nx.stack(hidden, axis=-2), None
        return layers.inter_sensor_attention(hidden, self.params["attention.wq"], self.params["attention.wk"],
                                             self.params["attention.wv"], self.arch.model.attention_repeats)

    def embed(self, batch: GraphBatch) -> TensorValue:
        hbar, _ = self.encode(batch)
        return layers.pool_and_flatten(hbar)

    def classify(self, batch: GraphBatch) -> Tuple[TensorValue, np.ndarray]:
        """(logits, softmax probabilities) from the pooled attention output."""
        hbar, _ = self.encode(batch)
        return layers.classify_head(hbar, self.params["head.w"], self.params["head.bias"])

    def forward(self, batch: GraphBatch) -> TensorValue:
        return self.classify(batch)[0]

    def predict_proba(self, batch: GraphBatch) -> np.ndarray:
        return self.classify(batch)[1]

    def attention_maps(self, batch: GraphBatch) -> np.ndarray:
        """B x t x n x n inter-sensor attention distributions."""
        _, maps = self.encode(batch)
        if maps is None:
            raise ConfigError("attention maps requested but attention is disabled")
        return maps.numpy()


class PlainGcnModel(HarModel):
    """One GCN stack over the full channel matrix."""
    kind = "gcn"

    def expected_shapes(self) -> "OrderedDict[str, Shape]":
        m = self.arch.model
        shapes: "OrderedDict[str, Shape]" = OrderedDict()
        for layer in range(m.gcn_layers):
            shapes[f"gcn.w{layer}"] = (self.arch.n_channels if layer == 0 else m.hidden, m.hidden)
        shapes["head.w"] = (m.hidden, self.arch.n_classes)
        shapes["head.bias"] = (self.arch.n_classes,)
        return shapes

    def embed(self, batch: GraphBatch) -> TensorValue:
        self._check_batch(batch)
        weights = [self.params[f"gcn.w{layer}"] for layer in range(self.arch.model.gcn_layers)]
        h = layers.gcn_stack(batch.norm_adjacency, TensorValue(batch.features), weights)
        return nx.mean_axis(h, axis=1)


class RagnnModel(HarModel):
    """Per-sensor LSTM then GAT layers; node outputs flattened into the head."""
    kind = "ragnn"

    def expected_shapes(self) -> "OrderedDict[str, Shape]":
        m = self.arch.model
        h = m.lstm_hidden
        shapes: "OrderedDict[str, Shape]" = OrderedDict()
        for i, d_i in enumerate(self.arch.sensor_dims):
            shapes[f"lstm.s{i}.wx"] = (d_i, 4 * h)
            shapes[f"lstm.s{i}.wh"] = (h, 4 * h)
            shapes[f"lstm.s{i}.bias"] = (4 * h,)
            for layer in range(m.gat_layers):
                shapes[f"gat.s{i}.w{layer}"] = (h if layer == 0 else m.gat_width, m.gat_width)
                shapes[f"gat.s{i}.a{layer}"] = (2 * m.gat_width, 1)
        width = self.arch.window_len * m.gat_width * len(self.arch.sensor_dims)
        shapes["head.w"] = (width, self.arch.n_classes)
        shapes["head.bias"] = (self.arch.n_classes,)
        return shapes

    def sensor_nodes(self, batch: GraphBatch, sensor: int) -> TensorValue:
        m = self.arch.model
        p = self.params
        h = layers.lstm_forward(TensorValue(batch.sensor_features[sensor]), p[f"lstm.s{sensor}.wx"],
                                p[f"lstm.s{sensor}.wh"], p[f"lstm.s{sensor}.bias"])
        for layer in range(m.gat_layers):
            h = layers.gat_layer(batch.adjacency, h, p[f"gat.s{sensor}.w{layer}"], p[f"gat.s{sensor}.a{layer}"],
                                 m.leaky_slope)
        return h

    def embed(self, batch: GraphBatch) -> TensorValue:
        self._check_batch(batch)
        if batch.n_nodes != self.arch.window_len:
            raise DimensionError(self.kind, (batch.n_nodes,), (self.arch.window_len,), detail="node count")
        nodes = nx.concat([self.sensor_nodes(batch, i) for i in range(batch.n_sensors)], axis=-1)
        b, t, f = nodes.shape
        return nx.reshape(nodes, (b, t * f))


# --- Functional forms ---

def plain_gcn_forward(batch: GraphBatch, model: PlainGcnModel) -> TensorValue:
    return model.forward(batch)


def ragnn_forward(batch: GraphBatch, model: RagnnModel) -> TensorValue:
    return model.forward(batch)


# --- Factory Function ---

# Store registered model classes
_model_registry = {
    'gcn_attention': GcnAttentionModel,
    'gcn': PlainGcnModel,
    'ragnn': RagnnModel,
}


def get_model(arch: Architecture, seed: int = 0) -> HarModel:
    """
    Factory function building a freshly initialised model of `arch.kind`.

    Raises:
        ConfigError: If the kind is not registered.
    """
    logger = logging.getLogger(__name__)
    model_class = _model_registry.get(arch.kind.lower())
    if model_class is None:
        logger.error(f"Unsupported model kind: '{arch.kind}'. Available: {sorted(_model_registry)}")
        raise ConfigError(f"Unsupported model kind: {arch.kind}")
    logger.info(f"Building model: {model_class.__name__}")
    return model_class(arch, seed)


def architecture_for(model: ModelConfig, sensor_dims: Sequence[int], n_classes: int,
                     window_len: int) -> Architecture:
    return Architecture(model, tuple(int(d) for d in sensor_dims), int(n_classes), int(window_len))
