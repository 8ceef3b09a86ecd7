"""Graph neural layers: GCN propagation, NN4G, and GraphSage.

All three expose the same forward/backward contract as the classical layers.
The GCN uses the self-loop-renormalized adjacency; NN4G deliberately keeps
the raw (unnormalized) adjacency so neighbor aggregates grow with degree;
GraphSage samples a fixed-size neighbor set and applies an order-invariant
aggregator (mean or max-pooling).
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError, StaleCacheError
from .graph import (
    Graph,
    adjacency_matrix,
    derive_seed,
    normalized_adjacency,
    sample_neighbors,
)
from .layers import BackwardResult, activation_pair, glorot_uniform, relu_grad
from .linalg import row_softmax

__all__ = ["GcnLayer", "Nn4gLayer", "GraphSageLayer", "GcnNodeClassifier"]


def _resolve_propagation(graph_or_matrix) -> np.ndarray:
    if isinstance(graph_or_matrix, Graph):
        return normalized_adjacency(graph_or_matrix)
    return np.asarray(graph_or_matrix, dtype=np.float64)


class GcnLayer:
    """One propagation step sigma(A_norm @ h @ w) over a fixed graph."""

    def __init__(self, in_dim: int, out_dim: int, *, activation: str = "relu",
                 rng: np.random.Generator):
        self.activation = activation
        self._act, self._act_grad = activation_pair(activation)
        self.params = {"w": glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim))}
        self._cache = None

    def forward(self, graph, h: np.ndarray) -> np.ndarray:
        anorm = _resolve_propagation(graph)
        if h.ndim != 2 or h.shape[0] != anorm.shape[0]:
            raise ShapeError("feature rows must match node count", h.shape, anorm.shape)
        if h.shape[1] != self.params["w"].shape[0]:
            raise ShapeError("feature width incompatible with weights",
                             h.shape, self.params["w"].shape)
        ah = anorm @ h
        z = ah @ self.params["w"]
        self._cache = (anorm, ah, z)
        return self._act(z)

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("gcn backward before forward")
        anorm, ah, z = self._cache
        dz = upstream * self._act_grad(z)
        grads = {"w": ah.T @ dz}
        dh = anorm.T @ (dz @ self.params["w"].T)
        return BackwardResult(input_grad=dh, param_grads=grads)


class Nn4gLayer:
    """Constructive spatial layer: self term plus an unnormalized sum of the
    previous layer's neighbor states.

    h_v = f(x_v @ w_self + (sum of h_prev over neighbors of v) @ w_nbr), with
    h_prev = 0 at layer zero. The neighbor sum is deliberately unnormalized,
    so aggregates scale with node degree.
    """

    def __init__(self, in_dim: int, prev_dim: int, out_dim: int, *,
                 activation: str = "relu", rng: np.random.Generator):
        self.activation = activation
        self._act, self._act_grad = activation_pair(activation)
        self.params = {
            "w_self": glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)),
            "w_nbr": glorot_uniform(rng, prev_dim, out_dim, (prev_dim, out_dim)),
        }
        self._cache = None

    def forward(self, g: Graph, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
        if x.shape[0] != g.node_count or h_prev.shape[0] != g.node_count:
            raise ShapeError("row counts must equal node count", x.shape, h_prev.shape)
        if x.shape[1] != self.params["w_self"].shape[0]:
            raise ShapeError("input width incompatible", x.shape, self.params["w_self"].shape)
        if h_prev.shape[1] != self.params["w_nbr"].shape[0]:
            raise ShapeError("state width incompatible", h_prev.shape,
                             self.params["w_nbr"].shape)
        adj = adjacency_matrix(g)
        nbr_sum = adj @ h_prev
        z = x @ self.params["w_self"] + nbr_sum @ self.params["w_nbr"]
        self._cache = (adj, x, nbr_sum, z)
        return self._act(z)

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("nn4g backward before forward")
        adj, x, nbr_sum, z = self._cache
        dz = upstream * self._act_grad(z)
        grads = {
            "w_self": x.T @ dz,
            "w_nbr": nbr_sum.T @ dz,
        }
        dx = dz @ self.params["w_self"].T
        dh_prev = adj.T @ (dz @ self.params["w_nbr"].T)
        return BackwardResult(input_grad=(dx, dh_prev), param_grads=grads)


class GraphSageLayer:
    """Sampled-neighborhood layer: out_v = sigma(concat(h_v, agg_v) @ w).

    agg_v is either the arithmetic mean of the sampled neighbors' rows or an
    elementwise max over a shared dense+relu transform of them. Zero-degree
    nodes aggregate a zero vector. Sampling is seeded per
    (layer seed, epoch, node), so training resamples each epoch yet replays
    exactly under a fixed seed.
    """

    def __init__(self, in_dim: int, out_dim: int, *, aggregator: str = "mean",
                 sample_size: int, seed: int, activation: str = "relu",
                 pool_dim: int | None = None, rng: np.random.Generator):
        if aggregator not in ("mean", "pooling"):
            raise ValueError(f"unknown aggregator {aggregator!r}")
        if sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        self.aggregator = aggregator
        self.sample_size = sample_size
        self.seed = seed
        self.epoch = 0
        self.activation = activation
        self._act, self._act_grad = activation_pair(activation)
        self.in_dim = in_dim
        self.agg_dim = in_dim if aggregator == "mean" else (pool_dim or in_dim)
        self.params = {
            "w": glorot_uniform(rng, in_dim + self.agg_dim, out_dim,
                                (in_dim + self.agg_dim, out_dim)),
        }
        if aggregator == "pooling":
            self.params["pool_w"] = glorot_uniform(rng, in_dim, self.agg_dim,
                                                   (in_dim, self.agg_dim))
            self.params["pool_b"] = glorot_uniform(rng, in_dim, self.agg_dim,
                                                   (1, self.agg_dim))
        self._cache = None

    def _samples(self, g: Graph) -> list[tuple]:
        return [
            sample_neighbors(g, v, self.sample_size,
                             derive_seed(self.seed, self.epoch, v)).sampled
            for v in range(g.node_count)
        ]

    def forward(self, g: Graph, h: np.ndarray) -> np.ndarray:
        if h.ndim != 2 or h.shape[0] != g.node_count:
            raise ShapeError("feature rows must match node count", h.shape, (g.node_count,))
        if h.shape[1] != self.in_dim:
            raise ShapeError("feature width differs from layer input dim",
                             h.shape, (self.in_dim,))
        samples = self._samples(g)
        agg = np.zeros((g.node_count, self.agg_dim))
        pool_cache = []
        for v, sample in enumerate(samples):
            if not sample:
                pool_cache.append(None)
                continue
            rows = h[list(sample)]
            if self.aggregator == "mean":
                agg[v] = rows.mean(axis=0)
                pool_cache.append(None)
            else:
                pre = rows @ self.params["pool_w"] + self.params["pool_b"]
                post = np.maximum(pre, 0.0)
                winners = post.argmax(axis=0)
                agg[v] = post[winners, np.arange(self.agg_dim)]
                pool_cache.append((rows, pre, winners))
        concat = np.hstack([h, agg])
        z = concat @ self.params["w"]
        self._cache = (samples, h.shape, concat, z, pool_cache)
        return self._act(z)

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("graphsage backward before forward")
        samples, h_shape, concat, z, pool_cache = self._cache
        dz = upstream * self._act_grad(z)
        grads = {"w": concat.T @ dz}
        dconcat = dz @ self.params["w"].T
        dh = dconcat[:, :self.in_dim].copy()
        dagg = dconcat[:, self.in_dim:]
        if self.aggregator == "pooling":
            grads["pool_w"] = np.zeros_like(self.params["pool_w"])
            grads["pool_b"] = np.zeros_like(self.params["pool_b"])
        for v, sample in enumerate(samples):
            if not sample:
                continue
            idx = list(sample)
            if self.aggregator == "mean":
                dh[idx] += dagg[v] / len(idx)
            else:
                rows, pre, winners = pool_cache[v]
                dpost = np.zeros_like(pre)
                dpost[winners, np.arange(self.agg_dim)] = dagg[v]
                dpre = dpost * relu_grad(pre)
                grads["pool_w"] += rows.T @ dpre
                grads["pool_b"] += dpre.sum(axis=0, keepdims=True)
                dh[idx] += dpre @ self.params["pool_w"].T
        return BackwardResult(input_grad=dh, param_grads=grads)


class GcnNodeClassifier:
    """Stack of GCN layers with a softmax read-out for node classification.

    Hidden layers use relu; the final layer is linear before the softmax.
    Parameters are exposed as a flat registry keyed ``gcn{i}.w``.
    """

    def __init__(self, dims, *, seed: int = 0):
        dims = list(dims)
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        rng = np.random.default_rng(seed)
        self.layers = []
        for i in range(len(dims) - 1):
            act = "identity" if i == len(dims) - 2 else "relu"
            self.layers.append(GcnLayer(dims[i], dims[i + 1], activation=act, rng=rng))
        self.params = {f"gcn{i + 1}.w": layer.params["w"]
                       for i, layer in enumerate(self.layers)}
        self._cache = None

    def forward(self, graph, x: np.ndarray) -> np.ndarray:
        anorm = _resolve_propagation(graph)
        h = x
        for layer in self.layers:
            h = layer.forward(anorm, h)
        probs = row_softmax(h)
        self._cache = probs
        return probs

    def backward(self, labels_onehot: np.ndarray, *, mask=None,
                 normalize: bool = False) -> dict:
        """Gradients of the cross-entropy on (optionally masked) nodes.

        With ``normalize`` the loss is averaged over the counted nodes,
        otherwise it is the plain sum over them.
        """
        if self._cache is None:
            raise StaleCacheError("classifier backward before forward")
        dlogits = self._cache - labels_onehot
        if mask is not None:
            keep = np.zeros(len(dlogits), dtype=bool)
            keep[mask] = True
            dlogits = dlogits * keep[:, None]
            counted = int(keep.sum())
        else:
            counted = len(dlogits)
        if normalize and counted:
            dlogits = dlogits / counted
        grads = {}
        upstream = dlogits
        for i in reversed(range(len(self.layers))):
            result = self.layers[i].backward(upstream)
            grads[f"gcn{i + 1}.w"] = result.param_grads["w"]
            upstream = result.input_grad
        return grads
