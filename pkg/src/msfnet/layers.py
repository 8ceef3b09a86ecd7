"""Neural layers with hand-derived backward passes.

Every layer follows one contract: ``forward(*inputs)`` caches what the
gradient needs, ``backward(upstream)`` returns a :class:`BackwardResult`
holding the gradient w.r.t. each differentiable input plus one gradient per
named parameter. Parameters are plain float64 arrays in ``layer.params`` so
an optimizer can update them in place.

:func:`grad_check` validates any such layer against central finite
differences; it is the verification backbone of the whole library.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .exceptions import ShapeError, StaleCacheError
from .linalg import row_softmax

__all__ = [
    "BackwardResult",
    "glorot_uniform",
    "relu",
    "relu_grad",
    "sigmoid",
    "sigmoid_grad",
    "activation_pair",
    "Dense",
    "Conv2d",
    "MaxPool2d",
    "MultiHeadAttention",
    "SideFusion",
    "PyramidPooling",
    "upsample_nearest",
    "upsample_nearest_backward",
    "adaptive_avg_pool",
    "adaptive_avg_pool_backward",
    "grad_check",
]


@dataclass
class BackwardResult:
    """Gradients from one backward pass.

    ``input_grad`` mirrors the forward input: a single array for single-input
    layers, a tuple (in forward argument order) for multi-input layers.
    ``param_grads`` has one entry per parameter, same names and shapes.
    """

    input_grad: object
    param_grads: dict


def _check_param_grads(params: dict, grads: dict) -> None:
    if set(params) != set(grads):
        raise ShapeError("parameter gradient names differ", tuple(params), tuple(grads))
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape for {name!r} differs", g.shape, params[name].shape)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Elementwise activations.
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    # Subgradient at exactly 0 is 0.
    return (x > 0.0).astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s * (1.0 - s)


_ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "sigmoid": (sigmoid, sigmoid_grad),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


def activation_pair(name: str):
    """(function, gradient-of-function-at-input) for a named activation."""
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(_ACTIVATIONS)}")


# ---------------------------------------------------------------------------
# Dense (affine) layer.
# ---------------------------------------------------------------------------


class Dense:
    """y = x @ w + b, bias broadcast per row."""

    def __init__(self, in_dim: int, out_dim: int, *, rng: np.random.Generator):
        self.params = {
            "w": glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)),
            "b": glorot_uniform(rng, in_dim, out_dim, (1, out_dim)),
        }
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        w = self.params["w"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError("dense input incompatible with weights", x.shape, w.shape)
        self._x = x
        return x @ w + self.params["b"]

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._x is None:
            raise StaleCacheError("dense backward before forward")
        x = self._x
        grads = {
            "w": x.T @ upstream,
            "b": upstream.sum(axis=0, keepdims=True),
        }
        _check_param_grads(self.params, grads)
        return BackwardResult(input_grad=upstream @ self.params["w"].T, param_grads=grads)


# ---------------------------------------------------------------------------
# 2-D convolution (cross-correlation), stride 1, zero padding, size-preserving.
# ---------------------------------------------------------------------------


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError("expected a (C,H,W) feature map or an (N,C,H,W) batch", x.shape)


class Conv2d:
    """Same-size 2-D convolution over channel-major feature maps.

    The kernel is odd-sized (3x3 by default) and stored flattened as
    (out_channels, in_channels*k*k) so parameters stay 2-D matrices.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 *, rng: np.random.Generator):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self.params = {
            "w": glorot_uniform(rng, fan_in, fan_out, (out_channels, fan_in)),
            "b": glorot_uniform(rng, fan_in, fan_out, (1, out_channels)),
        }
        self._cache = None

    def _im2col(self, xb: np.ndarray) -> np.ndarray:
        k, pad = self.kernel, self.kernel // 2
        padded = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))
        n, c, h, w = xb.shape
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * k * k)

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, squeeze = _as_batch(x)
        if xb.shape[1] != self.in_channels:
            raise ShapeError("conv input channels differ", xb.shape, (self.in_channels,))
        n, _, h, w = xb.shape
        cols = self._im2col(xb)
        out = cols @ self.params["w"].T + self.params["b"]
        out = out.transpose(0, 2, 1).reshape(n, self.out_channels, h, w)
        self._cache = (xb.shape, cols, squeeze)
        return out[0] if squeeze else out

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("conv backward before forward")
        (n, c, h, w), cols, squeeze = self._cache
        up = upstream[None] if squeeze else upstream
        k, pad = self.kernel, self.kernel // 2
        up_mat = up.reshape(n, self.out_channels, h * w).transpose(0, 2, 1)
        grads = {
            "w": np.einsum("npo,npq->oq", up_mat, cols),
            "b": up_mat.sum(axis=(0, 1))[None, :],
        }
        _check_param_grads(self.params, grads)
        dcols = (up_mat @ self.params["w"]).reshape(n, h, w, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        dpad = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for ki in range(k):
            for kj in range(k):
                dpad[:, :, ki:ki + h, kj:kj + w] += dcols[:, :, :, :, ki, kj]
        dx = dpad[:, :, pad:pad + h, pad:pad + w]
        return BackwardResult(input_grad=dx[0] if squeeze else dx, param_grads=grads)


# ---------------------------------------------------------------------------
# Non-overlapping max pooling.
# ---------------------------------------------------------------------------


class MaxPool2d:
    """window x window max pooling; gradient routes to the first argmax in
    row-major window order."""

    def __init__(self, window: int = 2):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.params: dict = {}
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, squeeze = _as_batch(x)
        n, c, h, w = xb.shape
        win = self.window
        if h % win or w % win:
            raise ShapeError(f"spatial dims must be divisible by {win}", xb.shape)
        ho, wo = h // win, w // win
        tiles = xb.reshape(n, c, ho, win, wo, win).transpose(0, 1, 2, 4, 3, 5)
        tiles = tiles.reshape(n, c, ho, wo, win * win)
        argmax = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, argmax[..., None], axis=-1)[..., 0]
        self._cache = (xb.shape, argmax, squeeze)
        return out[0] if squeeze else out

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("maxpool backward before forward")
        (n, c, h, w), argmax, squeeze = self._cache
        up = upstream[None] if squeeze else upstream
        win = self.window
        ho, wo = h // win, w // win
        dtiles = np.zeros((n, c, ho, wo, win * win))
        np.put_along_axis(dtiles, argmax[..., None], up[..., None], axis=-1)
        dx = dtiles.reshape(n, c, ho, wo, win, win).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return BackwardResult(input_grad=dx[0] if squeeze else dx, param_grads={})


# ---------------------------------------------------------------------------
# Nearest-neighbor resampling and adaptive average pooling (PPM substrate).
# ---------------------------------------------------------------------------


def _nearest_index(out_size: int, in_size: int) -> np.ndarray:
    return (np.arange(out_size) * in_size) // out_size


def upsample_nearest(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resample the trailing two axes to ``size`` by nearest-neighbor lookup."""
    ho, wo = size
    rows = _nearest_index(ho, x.shape[-2])
    cols = _nearest_index(wo, x.shape[-1])
    return x[..., rows[:, None], cols[None, :]]


def upsample_nearest_backward(upstream: np.ndarray, in_size: tuple[int, int]) -> np.ndarray:
    """Accumulate upstream gradient back onto the source pixels."""
    h, w = in_size
    ho, wo = upstream.shape[-2], upstream.shape[-1]
    rows = _nearest_index(ho, h)
    cols = _nearest_index(wo, w)
    flat_idx = (rows[:, None] * w + cols[None, :]).ravel()
    lead = upstream.shape[:-2]
    up_flat = upstream.reshape(-1, ho * wo)
    dx_flat = np.zeros((up_flat.shape[0], h * w))
    np.add.at(dx_flat, (np.arange(up_flat.shape[0])[:, None], flat_idx[None, :]), up_flat)
    return dx_flat.reshape(*lead, h, w)


def _bin_edges(size: int, bins: int) -> list[tuple[int, int]]:
    return [(int(np.floor(i * size / bins)), int(np.ceil((i + 1) * size / bins)))
            for i in range(bins)]


def adaptive_avg_pool(x: np.ndarray, bins: int) -> np.ndarray:
    """Average the trailing two axes into a bins x bins grid (floor/ceil edges)."""
    h, w = x.shape[-2], x.shape[-1]
    out = np.zeros(x.shape[:-2] + (bins, bins))
    for i, (r0, r1) in enumerate(_bin_edges(h, bins)):
        for j, (c0, c1) in enumerate(_bin_edges(w, bins)):
            out[..., i, j] = x[..., r0:r1, c0:c1].mean(axis=(-2, -1))
    return out


def adaptive_avg_pool_backward(upstream: np.ndarray, in_size: tuple[int, int]) -> np.ndarray:
    h, w = in_size
    bins = upstream.shape[-1]
    dx = np.zeros(upstream.shape[:-2] + (h, w))
    for i, (r0, r1) in enumerate(_bin_edges(h, bins)):
        for j, (c0, c1) in enumerate(_bin_edges(w, bins)):
            count = (r1 - r0) * (c1 - c0)
            dx[..., r0:r1, c0:c1] += upstream[..., i, j, None, None] / count
    return dx


# ---------------------------------------------------------------------------
# Multi-head scaled dot-product attention.
# ---------------------------------------------------------------------------


class MultiHeadAttention:
    """Parallel attention heads over learned projections, concatenated and
    re-projected.

    head_i = softmax(q Wq_i (k Wk_i)^T / sqrt(d_head)) (v Wv_i), then
    concat(head_1..head_h) @ wo. The 1/sqrt(d_head) scaling keeps the
    softmax out of saturation at moderate widths.
    """

    def __init__(self, model_dim: int, heads: int = 2, *, rng: np.random.Generator):
        if model_dim % heads != 0:
            raise ShapeError("model dim must be divisible by head count", (model_dim, heads))
        self.model_dim = model_dim
        self.heads = heads
        self.head_dim = model_dim // heads
        self.params = {
            name: glorot_uniform(rng, model_dim, model_dim, (model_dim, model_dim))
            for name in ("wq", "wk", "wv", "wo")
        }
        self._cache = None

    def attention_weights(self) -> list[np.ndarray]:
        """Per-head softmax weight matrices from the latest forward pass."""
        if self._cache is None:
            raise StaleCacheError("no forward pass cached")
        return [p.copy() for p in self._cache["P"]]

    def forward(self, q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
        d = self.model_dim
        for name, arr in (("q", q), ("k", k), ("v", v)):
            if arr.ndim != 2 or arr.shape[1] != d:
                raise ShapeError(f"{name} must be (tokens, {d})", arr.shape)
        if k.shape[0] != v.shape[0]:
            raise ShapeError("k and v must hold the same number of rows", k.shape, v.shape)
        proj_q = q @ self.params["wq"]
        proj_k = k @ self.params["wk"]
        proj_v = v @ self.params["wv"]
        scale = 1.0 / np.sqrt(self.head_dim)
        heads_out, softmaxes = [], []
        for i in range(self.heads):
            sl = slice(i * self.head_dim, (i + 1) * self.head_dim)
            scores = proj_q[:, sl] @ proj_k[:, sl].T * scale
            p = row_softmax(scores)
            softmaxes.append(p)
            heads_out.append(p @ proj_v[:, sl])
        concat = np.hstack(heads_out)
        self._cache = {
            "q": q, "k": k, "v": v,
            "proj_q": proj_q, "proj_k": proj_k, "proj_v": proj_v,
            "P": softmaxes, "concat": concat, "scale": scale,
        }
        return concat @ self.params["wo"]

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("attention backward before forward")
        c = self._cache
        dwo = c["concat"].T @ upstream
        dconcat = upstream @ self.params["wo"].T
        dproj_q = np.zeros_like(c["proj_q"])
        dproj_k = np.zeros_like(c["proj_k"])
        dproj_v = np.zeros_like(c["proj_v"])
        for i in range(self.heads):
            sl = slice(i * self.head_dim, (i + 1) * self.head_dim)
            p = c["P"][i]
            dhead = dconcat[:, sl]
            dp = dhead @ c["proj_v"][:, sl].T
            dproj_v[:, sl] = p.T @ dhead
            dscores = p * (dp - (dp * p).sum(axis=1, keepdims=True))
            dscores *= c["scale"]
            dproj_q[:, sl] = dscores @ c["proj_k"][:, sl]
            dproj_k[:, sl] = dscores.T @ c["proj_q"][:, sl]
        grads = {
            "wq": c["q"].T @ dproj_q,
            "wk": c["k"].T @ dproj_k,
            "wv": c["v"].T @ dproj_v,
            "wo": dwo,
        }
        _check_param_grads(self.params, grads)
        dq = dproj_q @ self.params["wq"].T
        dk = dproj_k @ self.params["wk"].T
        dv = dproj_v @ self.params["wv"].T
        return BackwardResult(input_grad=(dq, dk, dv), param_grads=grads)


# ---------------------------------------------------------------------------
# Side fusion of a deep and a shallow feature map.
# ---------------------------------------------------------------------------


class SideFusion:
    """Convex combination alpha*deep + (1-alpha)*shallow.

    When the maps are spatial and the deep one is smaller, it is aligned by
    nearest-neighbor upsampling first, which keeps the backward pass exact.
    alpha is a fixed configuration scalar, not a parameter.
    """

    def __init__(self, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = float(alpha)
        self.params: dict = {}
        self._cache = None

    def forward(self, deep: np.ndarray, shallow: np.ndarray) -> np.ndarray:
        deep_in_size = None
        aligned = deep
        if deep.shape != shallow.shape:
            spatial_ok = (
                deep.ndim == shallow.ndim
                and deep.ndim >= 3
                and deep.shape[:-2] == shallow.shape[:-2]
            )
            if not spatial_ok:
                raise ShapeError("fusion operands differ beyond spatial dims",
                                 deep.shape, shallow.shape)
            deep_in_size = deep.shape[-2:]
            aligned = upsample_nearest(deep, shallow.shape[-2:])
        self._cache = (deep_in_size, shallow.shape)
        return self.alpha * aligned + (1.0 - self.alpha) * shallow

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("fusion backward before forward")
        deep_in_size, _ = self._cache
        ddeep = self.alpha * upstream
        if deep_in_size is not None:
            ddeep = upsample_nearest_backward(ddeep, deep_in_size)
        return BackwardResult(input_grad=(ddeep, (1.0 - self.alpha) * upstream), param_grads={})


# ---------------------------------------------------------------------------
# Pyramid pooling module.
# ---------------------------------------------------------------------------


class PyramidPooling:
    """Average-pool the input to each pyramid level, upsample back, and
    concatenate with the input along channels.

    Output channel count is channels * (1 + number of levels); spatial size
    is preserved.
    """

    def __init__(self, levels):
        levels = tuple(int(l) for l in levels)
        if not levels:
            raise ValueError("pyramid levels must be nonempty")
        if any(l < 1 for l in levels):
            raise ValueError("pyramid levels must be positive")
        self.levels = levels
        self.params: dict = {}
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, squeeze = _as_batch(x)
        size = xb.shape[-2:]
        parts = [xb]
        for level in self.levels:
            pooled = adaptive_avg_pool(xb, level)
            parts.append(upsample_nearest(pooled, size))
        self._cache = (xb.shape, squeeze)
        out = np.concatenate(parts, axis=1)
        return out[0] if squeeze else out

    def backward(self, upstream: np.ndarray) -> BackwardResult:
        if self._cache is None:
            raise StaleCacheError("pyramid pooling backward before forward")
        shape, squeeze = self._cache
        up = upstream[None] if squeeze else upstream
        n, c, h, w = shape
        dx = up[:, :c].copy()
        for idx, level in enumerate(self.levels):
            chunk = up[:, (idx + 1) * c:(idx + 2) * c]
            dpooled = upsample_nearest_backward(chunk, (level, level))
            dx += adaptive_avg_pool_backward(dpooled, (h, w))
        return BackwardResult(input_grad=dx[0] if squeeze else dx, param_grads={})


# ---------------------------------------------------------------------------
# Finite-difference auditing.
# ---------------------------------------------------------------------------


def grad_check(layer, inputs, *, epsilon: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    The scalar objective is sum(U * forward(inputs)) for a fixed random U, so
    the analytic gradients are exactly what backward(U) returns. Every
    coordinate of every array input and every parameter is perturbed.
    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    inputs = tuple(inputs)
    rng = np.random.default_rng(seed)
    out = layer.forward(*inputs)
    upstream = rng.standard_normal(out.shape)
    result = layer.backward(upstream)

    array_inputs = [a for a in inputs if isinstance(a, np.ndarray)]
    input_grads = result.input_grad
    if isinstance(input_grads, np.ndarray):
        input_grads = (input_grads,)
    elif input_grads is None:
        input_grads = ()
    if len(input_grads) != len(array_inputs):
        raise ShapeError("backward returned a gradient count that differs from the "
                         "array-input count", len(input_grads), len(array_inputs))

    def objective() -> float:
        return float(np.sum(upstream * layer.forward(*inputs)))

    worst = 0.0

    def compare(target: np.ndarray, analytic: np.ndarray) -> None:
        nonlocal worst
        flat = target.reshape(-1)
        aflat = analytic.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            plus = objective()
            flat[idx] = orig - epsilon
            minus = objective()
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            denom = max(abs(aflat[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[idx] - numeric) / denom)

    for arr, grad in zip(array_inputs, input_grads):
        compare(arr, grad)
    for name, p in layer.params.items():
        compare(p, result.param_grads[name])
    return worst
