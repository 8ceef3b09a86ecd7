"""Gradient audit: finite-difference fixtures for every layer and the full model.

Each entry builds a small deterministic fixture and compares analytic
backward gradients with central differences. Individual layers must agree to
1e-4 relative error; the end-to-end composite (cross-entropy loss through
the whole classifier on six 16x16 images) to 1e-3.

Graph-layer fixtures use the sigmoid activation so the comparison is smooth;
the relu subgradient itself is exercised separately with kink-avoiding
inputs in the unit suite. The end-to-end fixture verifies that the kNN edge
set never changes while parameters are perturbed, otherwise the comparison
would be meaningless.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, derive_seed
from .layers import (
    Conv2d,
    Dense,
    MaxPool2d,
    MultiHeadAttention,
    PyramidPooling,
    SideFusion,
    grad_check,
)
from .gnn import GcnLayer, GraphSageLayer, Nn4gLayer
from .model import MsfCnnConfig, build_model
from .train import cross_entropy, one_hot

__all__ = ["LAYER_NAMES", "END_TO_END_NAME", "audit_layer",
           "msf_end_to_end_check", "run_audit", "LAYER_TOLERANCE",
           "END_TO_END_TOLERANCE"]

LAYER_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3
END_TO_END_NAME = "msf_cnn"


def _random_graph(rng: np.random.Generator, n: int, p: float = 0.4) -> Graph:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return Graph.from_edges(n, edges)


def _fixture_dense(rng):
    return Dense(4, 3, rng=rng), (rng.standard_normal((5, 4)),)


def _fixture_conv2d(rng):
    return Conv2d(2, 3, rng=rng), (rng.standard_normal((2, 2, 6, 6)),)


def _fixture_maxpool(rng):
    return MaxPool2d(2), (rng.standard_normal((2, 3, 4, 4)),)


def _fixture_attention(rng):
    layer = MultiHeadAttention(4, heads=2, rng=rng)
    return layer, (rng.standard_normal((3, 4)), rng.standard_normal((5, 4)),
                   rng.standard_normal((5, 4)))


def _fixture_side_fusion(rng):
    return SideFusion(0.6), (rng.standard_normal((3, 2, 2)),
                             rng.standard_normal((3, 4, 4)))


def _fixture_ppm(rng):
    return PyramidPooling((1, 2, 3)), (rng.standard_normal((2, 2, 4, 4)),)


def _fixture_gcn(rng):
    graph = _random_graph(rng, 6)
    layer = GcnLayer(3, 4, activation="sigmoid", rng=rng)
    return layer, (graph, rng.standard_normal((6, 3)))


def _fixture_nn4g(rng):
    graph = _random_graph(rng, 6)
    layer = Nn4gLayer(3, 2, 4, activation="sigmoid", rng=rng)
    return layer, (graph, rng.standard_normal((6, 3)), rng.standard_normal((6, 2)))


def _fixture_graphsage(rng):
    graph = _random_graph(rng, 6)
    layer = GraphSageLayer(3, 4, aggregator="mean", sample_size=8,
                           seed=11, activation="sigmoid", rng=rng)
    return layer, (graph, rng.standard_normal((6, 3)))


def _fixture_graphsage_pool(rng):
    graph = _random_graph(rng, 6)
    layer = GraphSageLayer(3, 4, aggregator="pooling", sample_size=8,
                           seed=13, activation="sigmoid", pool_dim=3, rng=rng)
    return layer, (graph, rng.standard_normal((6, 3)))


_FIXTURES = {
    "dense": _fixture_dense,
    "conv2d": _fixture_conv2d,
    "maxpool": _fixture_maxpool,
    "attention": _fixture_attention,
    "side_fusion": _fixture_side_fusion,
    "ppm": _fixture_ppm,
    "gcn": _fixture_gcn,
    "nn4g": _fixture_nn4g,
    "graphsage": _fixture_graphsage,
    "graphsage_pool": _fixture_graphsage_pool,
}

LAYER_NAMES = tuple(_FIXTURES)


def _name_key(name: str) -> int:
    # stable per-target offset so fixtures decorrelate across audit targets
    return sum((i + 1) * b for i, b in enumerate(name.encode("utf-8")))


def audit_layer(name: str, seed: int = 0) -> float:
    """Max relative gradient error for one named layer fixture."""
    try:
        builder = _FIXTURES[name]
    except KeyError:
        raise ValueError(f"unknown audit target {name!r}; "
                         f"expected one of {sorted(_FIXTURES)} or {END_TO_END_NAME!r}")
    rng = np.random.default_rng(derive_seed(seed, _name_key(name)))
    layer, inputs = builder(rng)
    return grad_check(layer, inputs, seed=derive_seed(seed, 1))


def _audit_config() -> MsfCnnConfig:
    return MsfCnnConfig(conv_channels=(2, 3, 3, 3), pool_positions=(1, 2),
                        scales=2, fusion_weights=(0.6, 0.4), ppm_levels=(1, 2),
                        gnn_kind="gcn", gnn_layers=2, gnn_hidden=4,
                        knn_k=2, classes=2, in_channels=1)


def msf_end_to_end_check(seed: int = 0, *, epsilon: float = 1e-5,
                         images: int = 6, size: int = 16) -> float:
    """Max relative error of the full-model cross-entropy gradient.

    Perturbs every registered parameter by +-epsilon and recomputes the loss
    with a fresh forward pass (including graph construction). Raises if any
    perturbation changes the kNN edge set: the discrete structure must stay
    constant for the comparison to be valid.
    """
    model = build_model(_audit_config(), seed)
    rng = np.random.default_rng(derive_seed(seed, 424242))
    x = rng.uniform(0.0, 1.0, size=(images, 1, size, size))
    y = one_hot(rng.integers(0, model.config.classes, size=images),
                model.config.classes)

    probs = model.forward(x)
    base_edges = model._cache["graph"].edges
    analytic = model.backward(y)

    def loss() -> float:
        value, _ = cross_entropy(model.forward(x), y)
        if model._cache["graph"].edges != base_edges:
            raise RuntimeError("kNN edge set changed under perturbation; "
                               "finite differences are invalid for this fixture")
        return value

    worst = 0.0
    for name, param in model.params.items():
        flat = param.reshape(-1)
        grad = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            plus = loss()
            flat[idx] = orig - epsilon
            minus = loss()
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            denom = max(abs(grad[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[idx] - numeric) / denom)
    return worst


def run_audit(scope: str = "all", seeds=(0, 1, 2, 3, 4)) -> dict:
    """Run the requested audits over every seed; worst error per target.

    Returns {name: {"max_rel_error", "threshold", "pass"}}.
    """
    if scope == "all":
        targets = list(LAYER_NAMES) + [END_TO_END_NAME]
    elif scope in _FIXTURES or scope == END_TO_END_NAME:
        targets = [scope]
    else:
        raise ValueError(f"unknown audit scope {scope!r}")
    results = {}
    for name in targets:
        if name == END_TO_END_NAME:
            errs = [msf_end_to_end_check(seed) for seed in seeds]
            threshold = END_TO_END_TOLERANCE
        else:
            errs = [audit_layer(name, seed) for seed in seeds]
            threshold = LAYER_TOLERANCE
        worst = max(errs)
        results[name] = {
            "max_rel_error": worst,
            "threshold": threshold,
            "pass": bool(worst <= threshold),
        }
    return results
