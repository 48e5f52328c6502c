"""Minimal dense feed-forward network kernel shared by the selection agent's
Q-network and the FL task model.

Forward/backward work on float64 throughout and accept a single input vector
(d,) or a batch (B, d). Gradients are exact reverse-mode derivatives of the
scalar whose output-gradient is supplied, so finite-difference checks hold to
numerical precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "softmax", "identity")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths plus one activation per affine layer."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be >= 1")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("need exactly one activation per affine layer")
        for i, act in enumerate(self.activations):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if act == "softmax" and i != len(self.activations) - 1:
                raise ValueError("softmax is only supported at the output layer")

    @classmethod
    def mlp(cls, input_size: int, hidden: Sequence[int], output_size: int,
            output_activation: str = "identity") -> "NetworkSpec":
        """Relu hidden stack with a configurable output activation."""
        sizes = (input_size, *hidden, output_size)
        acts = ("relu",) * len(hidden) + (output_activation,)
        return cls(sizes, acts)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def num_parameters(self) -> int:
        return sum(
            i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )


@dataclass
class Parameters:
    """Per-layer weight matrices (fan_in x fan_out) and bias vectors."""

    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match the network spec")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l} parameter shapes do not match the spec")


def init(spec: NetworkSpec, seed: int | np.random.Generator) -> Parameters:
    """He-uniform initialization for relu layers, Xavier-uniform otherwise."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for l, act in enumerate(spec.activations):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Parameters(spec, weights, biases)


def init_bound(spec: NetworkSpec, layer: int) -> float:
    """The initialization bound used for the given layer's weights."""
    fan_in, fan_out = spec.layer_sizes[layer], spec.layer_sizes[layer + 1]
    if spec.activations[layer] == "relu":
        return float(np.sqrt(6.0 / fan_in))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def clone_parameters(params: Parameters) -> Parameters:
    """Deep copy; mutating either side never affects the other."""
    return Parameters(
        params.spec,
        [w.copy() for w in params.weights],
        [b.copy() for b in params.biases],
    )


def zeros_like_parameters(params: Parameters) -> Parameters:
    return Parameters(
        params.spec,
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    """Intermediate activations required by backward."""

    x: np.ndarray                       # 2-D input actually fed through
    pre: list[np.ndarray]               # pre-activation per layer
    post: list[np.ndarray]              # post-activation per layer
    squeeze: bool = field(default=False)  # True when the caller passed a vector


def forward(params: Parameters, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Affine + activation composition; returns the output and a cache for
    backward. Softmax outputs are probability vectors."""
    arr = np.asarray(x, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.shape[1] != params.spec.input_size:
        raise ValueError(
            f"input size {arr.shape[1]} != network input {params.spec.input_size}"
        )
    cache = ForwardCache(x=arr, pre=[], post=[], squeeze=squeeze)
    h = arr
    for w, b, act in zip(params.weights, params.biases, params.spec.activations):
        z = h @ w + b
        cache.pre.append(z)
        if act == "relu":
            h = np.maximum(z, 0.0)
        elif act == "softmax":
            h = _softmax(z)
        else:
            h = z
        cache.post.append(h)
    out = h[0] if squeeze else h
    return out, cache


def backward(params: Parameters, cache: ForwardCache, out_grad: np.ndarray) -> Parameters:
    """Exact gradients of all parameters given the loss gradient at the output."""
    g = np.asarray(out_grad, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise ValueError("output gradient shape does not match the cached forward")
    grads = zeros_like_parameters(params)
    for l in range(len(params.weights) - 1, -1, -1):
        act = params.spec.activations[l]
        if act == "relu":
            dz = g * (cache.pre[l] > 0)
        elif act == "softmax":
            p = cache.post[l]
            dz = p * (g - (p * g).sum(axis=-1, keepdims=True))
        else:
            dz = g
        h_in = cache.x if l == 0 else cache.post[l - 1]
        grads.weights[l] = h_in.T @ dz
        grads.biases[l] = dz.sum(axis=0)
        g = dz @ params.weights[l].T
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators plus the step count."""

    m: Parameters
    v: Parameters
    step: int = 0
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: Parameters, alpha: float = 0.01) -> AdamState:
    return AdamState(
        m=zeros_like_parameters(params), v=zeros_like_parameters(params), alpha=alpha
    )


def adam_step(
    params: Parameters, grads: Parameters, state: AdamState, inplace: bool = False
) -> tuple[Parameters, AdamState]:
    """One bias-corrected Adam update; raises on non-finite gradients.

    With inplace=True the given parameter and moment arrays are updated
    directly (training loops that own their network exclusively); otherwise
    fresh copies are returned and the inputs stay untouched.
    """
    for g in (*grads.weights, *grads.biases):
        if not np.isfinite(g).all():
            raise ValueError("non-finite gradient: training diverged")
    t = state.step + 1
    if inplace:
        new_params, new_m, new_v = params, state.m, state.v
    else:
        new_params = clone_parameters(params)
        new_m = clone_parameters(state.m)
        new_v = clone_parameters(state.v)
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    for arrays in (
        (new_params.weights, grads.weights, new_m.weights, new_v.weights),
        (new_params.biases, grads.biases, new_m.biases, new_v.biases),
    ):
        for p, g, m, v in zip(*arrays):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.alpha * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    if inplace:
        state.step = t
        return params, state
    return new_params, replace(state, m=new_m, v=new_v, step=t)


def loss_mse(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean squared error over the masked entries only.

    Returns the scalar loss and its gradient with respect to pred.
    """
    p = np.asarray(pred, dtype=float)
    t = np.broadcast_to(np.asarray(target, dtype=float), p.shape)
    if mask is None:
        m = np.ones_like(p, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != p.shape:
            raise ValueError("mask shape must match pred")
    count = int(m.sum())
    if count == 0:
        raise ValueError("mse mask selects no entries")
    diff = np.where(m, p - t, 0.0)
    loss = float((diff**2).sum() / count)
    grad = 2.0 * diff / count
    return loss, grad


def loss_cross_entropy(
    probs: np.ndarray, labels: int | np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the labels under probability outputs.

    Returns the scalar loss and its gradient with respect to probs.
    """
    p = np.asarray(probs, dtype=float)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None, :]
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    if y.shape[0] != p.shape[0]:
        raise ValueError("need one label per probability row")
    if (y < 0).any() or (y >= p.shape[1]).any():
        raise ValueError("label out of range")
    rows = np.arange(p.shape[0])
    picked = np.maximum(p[rows, y], 1e-300)
    loss = float(-np.log(picked).mean())
    grad = np.zeros_like(p)
    grad[rows, y] = -1.0 / (picked * p.shape[0])
    if squeeze:
        grad = grad[0]
    return loss, grad


def parameters_to_jsonable(params: Parameters) -> dict:
    """Nested-list encoding (declared layer order, row-major matrices)."""
    return {
        "layer_sizes": list(params.spec.layer_sizes),
        "activations": list(params.spec.activations),
        "layers": [
            {"w": w.tolist(), "b": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def parameters_from_jsonable(obj: dict) -> Parameters:
    spec = NetworkSpec(tuple(obj["layer_sizes"]), tuple(obj["activations"]))
    weights = [np.asarray(layer["w"], dtype=float) for layer in obj["layers"]]
    biases = [np.asarray(layer["b"], dtype=float) for layer in obj["layers"]]
    return Parameters(spec, weights, biases)
