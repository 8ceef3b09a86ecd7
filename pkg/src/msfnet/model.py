"""The multi-scale fusion classifier: conv trunk, fused taps, pyramid
pooling, per-batch similarity graph, GNN refinement, softmax head.

The trunk is four same-size convolutions with two max-pool stages. Feature
maps are tapped at two depths, aligned by nearest-neighbor upsampling, and
combined as a fixed convex combination. The fused map (optionally enriched
by pyramid pooling) is global-average-pooled to one row per image; a
k-nearest-neighbor cosine graph built over those rows drives a stack of
graph layers before the dense softmax head.

All trainable matrices live in one flat name->array registry so the
optimizer and the checkpoint format see a single parameter namespace.
Gradients through the discrete kNN edge selection are zero: the edge set is
piecewise constant in the features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ShapeError, StaleCacheError
from .gnn import GcnLayer, GraphSageLayer
from .graph import derive_seed, knn_similarity_graph, normalized_adjacency
from .layers import Conv2d, Dense, MaxPool2d, PyramidPooling, SideFusion, relu, relu_grad
from .linalg import row_softmax

__all__ = [
    "MsfCnnConfig",
    "MsfCnnModel",
    "LinearSoftmaxModel",
    "build_model",
    "save_checkpoint",
    "load_checkpoint",
    "load_params_into",
]

CHECKPOINT_MAGIC = b"MSFC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MsfCnnConfig:
    """Architecture knobs. Defaults follow the experimental protocol:
    four conv layers, two pools, fusion weights [0.6, 0.4]."""

    conv_channels: tuple = (4, 8, 8, 8)
    pool_positions: tuple = (1, 2)
    scales: int = 2
    fusion_weights: tuple = (0.6, 0.4)
    ppm_levels: tuple = (1, 2)
    gnn_kind: str = "gcn"
    gnn_layers: int = 2
    gnn_hidden: int = 16
    gnn_sample_size: int = 8
    knn_k: int = 5
    classes: int = 2
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "pool_positions", tuple(int(p) for p in self.pool_positions))
        object.__setattr__(self, "fusion_weights", tuple(float(w) for w in self.fusion_weights))
        object.__setattr__(self, "ppm_levels", tuple(int(l) for l in self.ppm_levels))
        if len(self.conv_channels) != 4:
            raise ValueError("exactly four conv layers are required")
        if any(c < 1 for c in self.conv_channels):
            raise ValueError("conv channel counts must be positive")
        if len(self.pool_positions) != 2:
            raise ValueError("exactly two pool positions are required")
        if len(set(self.pool_positions)) != 2 or not all(0 <= p < 4 for p in self.pool_positions):
            raise ValueError("pool positions must be two distinct conv indices in 0..3")
        if self.scales not in (1, 2):
            raise ValueError("scales must be 1 (plain trunk) or 2 (fused taps)")
        if len(self.fusion_weights) != self.scales:
            raise ValueError("fusion_weights length must equal scales")
        if abs(sum(self.fusion_weights) - 1.0) > 1e-12:
            raise ValueError("fusion_weights must sum to 1")
        if any(not 0.0 <= w <= 1.0 for w in self.fusion_weights):
            raise ValueError("fusion weights must lie in [0, 1]")
        if self.scales == 2 and self.conv_channels[1] != self.conv_channels[3]:
            raise ValueError("tapped conv layers (2 and 4) must agree in channels "
                             f"for fusion; got {self.conv_channels}")
        if self.gnn_kind not in ("gcn", "graphsage"):
            raise ValueError("gnn_kind must be 'gcn' or 'graphsage'")
        if self.gnn_layers < 1 or self.gnn_hidden < 1:
            raise ValueError("gnn stack needs at least one layer and a positive width")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")

    @property
    def tap_indices(self) -> tuple:
        # Shallow tap after conv 2, deep tap after conv 4 (post-activation,
        # pre-pool); a single-scale trunk taps only the last conv.
        return (1, 3) if self.scales == 2 else (3,)

    @property
    def fused_channels(self) -> int:
        base = self.conv_channels[3]
        return base * (1 + len(self.ppm_levels)) if self.ppm_levels else base


class MsfCnnModel:
    """Composite classifier; see module docstring for the data path."""

    def __init__(self, config: MsfCnnConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.convs = []
        prev = config.in_channels
        for c in config.conv_channels:
            self.convs.append(Conv2d(prev, c, rng=rng))
            prev = c
        self.pools = {p: MaxPool2d(2) for p in config.pool_positions}
        self.fusion = SideFusion(config.fusion_weights[0]) if config.scales == 2 else None
        self.ppm = PyramidPooling(config.ppm_levels) if config.ppm_levels else None
        self.gnns = []
        width = config.fused_channels
        for i in range(config.gnn_layers):
            if config.gnn_kind == "gcn":
                self.gnns.append(GcnLayer(width, config.gnn_hidden, activation="relu", rng=rng))
            else:
                self.gnns.append(GraphSageLayer(
                    width, config.gnn_hidden, aggregator="mean",
                    sample_size=config.gnn_sample_size,
                    seed=derive_seed(seed, 7001, i), activation="relu", rng=rng))
            width = config.gnn_hidden
        self.head = Dense(width, config.classes, rng=rng)
        self.params = self._build_registry()
        self._cache = None

    def _build_registry(self) -> dict:
        registry: dict = {}
        for i, conv in enumerate(self.convs):
            registry[f"conv{i + 1}.w"] = conv.params["w"]
            registry[f"conv{i + 1}.b"] = conv.params["b"]
        for i, layer in enumerate(self.gnns):
            for pname, arr in layer.params.items():
                registry[f"gnn{i + 1}.{pname}"] = arr
        registry["head.w"] = self.head.params["w"]
        registry["head.b"] = self.head.params["b"]
        if len(registry) != sum(len(c.params) for c in self.convs) + \
                sum(len(g.params) for g in self.gnns) + len(self.head.params):
            raise ValueError("parameter registry names collide")
        return registry

    @property
    def min_batch_size(self) -> int:
        return self.config.knn_k + 1

    def set_epoch(self, epoch: int) -> None:
        for layer in self.gnns:
            if hasattr(layer, "epoch"):
                layer.epoch = epoch

    # -- feature extraction ------------------------------------------------

    def extract_features(self, x: np.ndarray) -> np.ndarray:
        """Fused, pooled feature row per image: trunk, taps, fusion, PPM, GAP."""
        if x.ndim != 4:
            raise ShapeError("expected an (N, C, H, W) batch", x.shape)
        if x.shape[1] != self.config.in_channels:
            raise ShapeError("input channels differ from config",
                             x.shape, (self.config.in_channels,))
        taps = {}
        pre_acts = []
        executed_pools = set()
        last_tap = self.config.tap_indices[-1]
        h = x
        for i, conv in enumerate(self.convs):
            z = conv.forward(h)
            pre_acts.append(z)
            a = relu(z)
            if i in self.config.tap_indices:
                taps[i] = a
            if i == last_tap:
                break
            if i in self.pools:
                a = self.pools[i].forward(a)
                executed_pools.add(i)
            h = a
        if self.fusion is not None:
            deep, shallow = taps[self.config.tap_indices[1]], taps[self.config.tap_indices[0]]
            fused = self.fusion.forward(deep, shallow)
        else:
            fused = taps[last_tap]
        enriched = self.ppm.forward(fused) if self.ppm is not None else fused
        feats = enriched.mean(axis=(2, 3))
        self._cache = {
            "x": x, "pre_acts": pre_acts, "executed_pools": executed_pools,
            "spatial": enriched.shape[2:], "feats": feats,
        }
        return feats

    def _backward_to_convs(self, dfeats: np.ndarray) -> dict:
        """Gradients of the conv trunk given a gradient on the feature rows."""
        cache = self._cache
        h_sp, w_sp = cache["spatial"]
        dmap = np.broadcast_to(dfeats[:, :, None, None] / (h_sp * w_sp),
                               dfeats.shape + (h_sp, w_sp)).copy()
        if self.ppm is not None:
            dmap = self.ppm.backward(dmap).input_grad
        tap_grads = {}
        if self.fusion is not None:
            ddeep, dshallow = self.fusion.backward(dmap).input_grad
            tap_grads[self.config.tap_indices[1]] = ddeep
            tap_grads[self.config.tap_indices[0]] = dshallow
        else:
            tap_grads[self.config.tap_indices[-1]] = dmap
        grads: dict = {}
        g = None
        for i in reversed(range(self.config.tap_indices[-1] + 1)):
            if g is not None and i in cache["executed_pools"]:
                g = self.pools[i].backward(g).input_grad
            if i in tap_grads:
                g = tap_grads[i] if g is None else g + tap_grads[i]
            gz = g * relu_grad(cache["pre_acts"][i])
            result = self.convs[i].backward(gz)
            grads[f"conv{i + 1}.w"] = result.param_grads["w"]
            grads[f"conv{i + 1}.b"] = result.param_grads["b"]
            g = result.input_grad
        return grads

    def backward_features(self, dfeats: np.ndarray) -> dict:
        """Trunk gradients for a loss defined directly on extract_features output."""
        if self._cache is None:
            raise StaleCacheError("backward_features before extract_features")
        return self._backward_to_convs(dfeats)

    # -- full classifier ---------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class-probability rows for one batch (rows sum to 1)."""
        if len(x) < self.min_batch_size:
            raise ValueError(f"batch of {len(x)} too small for knn_k="
                             f"{self.config.knn_k}; need at least {self.min_batch_size}")
        feats = self.extract_features(x)
        graph = knn_similarity_graph(feats, self.config.knn_k)
        anorm = normalized_adjacency(graph)
        h = feats
        for layer in self.gnns:
            if isinstance(layer, GcnLayer):
                h = layer.forward(anorm, h)
            else:
                h = layer.forward(graph, h)
        logits = self.head.forward(h)
        probs = row_softmax(logits)
        self._cache.update({"graph": graph, "probs": probs})
        return probs

    def backward(self, labels_onehot: np.ndarray) -> dict:
        """Cross-entropy gradients for every registered parameter.

        Requires a prior forward() on the same batch. The softmax +
        cross-entropy composite gives dlogits = (probs - labels) / N; the
        kNN edge set is treated as constant.
        """
        if self._cache is None or "probs" not in self._cache:
            raise StaleCacheError("backward before forward")
        probs = self._cache["probs"]
        if labels_onehot.shape != probs.shape:
            raise ShapeError("labels shape differs from probabilities",
                             labels_onehot.shape, probs.shape)
        grads: dict = {}
        dlogits = (probs - labels_onehot) / probs.shape[0]
        head_result = self.head.backward(dlogits)
        grads["head.w"] = head_result.param_grads["w"]
        grads["head.b"] = head_result.param_grads["b"]
        upstream = head_result.input_grad
        for i in reversed(range(len(self.gnns))):
            result = self.gnns[i].backward(upstream)
            for pname, g in result.param_grads.items():
                grads[f"gnn{i + 1}.{pname}"] = g
            upstream = result.input_grad
        grads.update(self._backward_to_convs(upstream))
        return grads


class LinearSoftmaxModel:
    """Dense layer plus softmax; the minimal model the training loop accepts."""

    min_batch_size = 1

    def __init__(self, in_dim: int, classes: int, seed: int = 0):
        self.head = Dense(in_dim, classes, rng=np.random.default_rng(seed))
        self.params = {"head.w": self.head.params["w"], "head.b": self.head.params["b"]}
        self._probs = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._probs = row_softmax(self.head.forward(x))
        return self._probs

    def backward(self, labels_onehot: np.ndarray) -> dict:
        if self._probs is None:
            raise StaleCacheError("backward before forward")
        dlogits = (self._probs - labels_onehot) / len(labels_onehot)
        result = self.head.backward(dlogits)
        return {"head.w": result.param_grads["w"], "head.b": result.param_grads["b"]}


def build_model(config: MsfCnnConfig, seed: int = 0) -> MsfCnnModel:
    """Deterministic construction: equal seeds give bit-identical parameters."""
    return MsfCnnModel(config, seed)


# ---------------------------------------------------------------------------
# Checkpoints: flat binary container of named 2-D float64 matrices.
# ---------------------------------------------------------------------------


def save_checkpoint(params: dict, path) -> None:
    """Header (magic "MSFC", version u32) then per-parameter records:
    name length u16, name bytes, rows u32, cols u32, row-major little-endian
    float64 payload."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in params.items():
            if arr.ndim != 2:
                raise ShapeError(f"checkpoint parameters must be 2-D ({name!r})", arr.shape)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    params: dict = {}
    offset = 8
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", blob, offset)
        offset += 8
        count = rows * cols
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        params[name] = data.reshape(rows, cols).astype(np.float64)
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after last parameter record")
    return params


def load_params_into(model, loaded: dict) -> None:
    """Copy checkpoint values into a built model's registry, shape-checked."""
    if set(loaded) != set(model.params):
        missing = set(model.params) - set(loaded)
        extra = set(loaded) - set(model.params)
        raise ShapeError(f"checkpoint names differ (missing {sorted(missing)}, "
                         f"extra {sorted(extra)})")
    for name, arr in loaded.items():
        target = model.params[name]
        if arr.shape != target.shape:
            raise ShapeError(f"checkpoint shape for {name!r} differs",
                             arr.shape, target.shape)
        target[...] = arr
