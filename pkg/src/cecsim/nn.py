"""Minimal dense feedforward networks with reverse-mode gradients and Adam.

Just enough machinery for the actor, critic, and environment-model regressors:
ReLU hidden layers, per-head output activations (identity, sigmoid, or softmax
over a segment), exact backprop, soft target blending, and a JSON checkpoint
format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_FORMAT = "cecsim-net-v1"

Head = tuple[str, int]  # (kind, width); kinds: identity | sigmoid | softmax


@dataclass
class DenseNet:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    heads: tuple[Head, ...]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        it = iter(params)
        for i in range(len(self.weights)):
            self.weights[i] = next(it)
            self.biases[i] = next(it)


def init_dense(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    heads: Sequence[Head] | None = None,
) -> DenseNet:
    """Uniform +-1/sqrt(fan_in) initialization; heads default to one identity
    head spanning the whole output layer."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"bad layer sizes {sizes}")
    if heads is None:
        heads = (("identity", sizes[-1]),)
    heads = tuple((str(k), int(w)) for k, w in heads)
    if sum(w for _, w in heads) != sizes[-1]:
        raise ValueError("head widths must sum to the output dimension")
    for kind, _ in heads:
        if kind not in ("identity", "sigmoid", "softmax"):
            raise ValueError(f"unknown head kind {kind!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        # nonzero bias init keeps pre-activations off the exact ReLU kink
        biases.append(rng.uniform(-bound, bound, fan_out))
    return DenseNet(sizes, weights, biases, heads)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_heads(net: DenseNet, z: np.ndarray) -> np.ndarray:
    y = np.empty_like(z)
    off = 0
    for kind, width in net.heads:
        seg = z[..., off : off + width]
        if kind == "identity":
            y[..., off : off + width] = seg
        elif kind == "sigmoid":
            y[..., off : off + width] = _sigmoid(seg)
        else:  # softmax
            shifted = seg - seg.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            y[..., off : off + width] = e / e.sum(axis=-1, keepdims=True)
        off += width
    return y


def _head_backward(net: DenseNet, y: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    grad_z = np.empty_like(grad_y)
    off = 0
    for kind, width in net.heads:
        seg_y = y[..., off : off + width]
        seg_g = grad_y[..., off : off + width]
        if kind == "identity":
            grad_z[..., off : off + width] = seg_g
        elif kind == "sigmoid":
            grad_z[..., off : off + width] = seg_g * seg_y * (1.0 - seg_y)
        else:  # softmax Jacobian: s * (g - <g, s>)
            dot = (seg_g * seg_y).sum(axis=-1, keepdims=True)
            grad_z[..., off : off + width] = seg_y * (seg_g - dot)
        off += width
    return grad_z


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Layered affine + ReLU evaluation with per-head output activations.

    Accepts a single vector or a batch (rows are samples).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    if h.shape[-1] != net.input_dim:
        raise ValueError(f"input width {h.shape[-1]} != {net.input_dim}")
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    y = _apply_heads(net, h)
    return y[0] if squeeze else y


def forward_cached(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    x = np.asarray(x, dtype=float)
    h = x.reshape(1, -1) if x.ndim == 1 else x
    cache = [h]
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
        cache.append(h)
    y = _apply_heads(net, cache[-1])
    return y, cache


def backward(
    net: DenseNet, x: np.ndarray, upstream_grad: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients of forward().

    Returns parameter gradients in params() order (summed over the batch) and
    the gradient with respect to the input (per sample).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    y, cache = forward_cached(net, x)
    g = np.asarray(upstream_grad, dtype=float)
    g = g.reshape(1, -1) if g.ndim == 1 else g
    if g.shape != y.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {y.shape}")
    grad = _head_backward(net, y, g)
    n_layers = len(net.weights)
    grads_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        a_prev = cache[i]
        if i < n_layers - 1:
            grad = grad * (cache[i + 1] > 0.0)
        grads_w[i] = a_prev.T @ grad
        grads_b[i] = grad.sum(axis=0)
        grad = grad @ net.weights[i].T
    params_grads = []
    for gw, gb in zip(grads_w, grads_b):
        params_grads.append(gw)
        params_grads.append(gb)
    return params_grads, (grad[0] if squeeze else grad)


@dataclass
class OptimizerState:
    """Adam accumulator (bias-corrected first/second moments)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: Sequence[np.ndarray], lr: float) -> OptimizerState:
    return OptimizerState(
        lr=lr,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def optimize_step(
    opt: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
) -> list[np.ndarray]:
    """One Adam update; mutates params in place and returns them."""
    if len(params) != len(opt.m) or len(params) != len(grads):
        raise ValueError("params/grads do not match optimizer state")
    opt.step_count += 1
    t = opt.step_count
    for i, (p, g) in enumerate(zip(params, grads)):
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * (g * g)
        m_hat = opt.m[i] / (1.0 - opt.beta1**t)
        v_hat = opt.v[i] / (1.0 - opt.beta2**t)
        p -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return list(params)


def soft_update(
    target_params: Sequence[np.ndarray], online_params: Sequence[np.ndarray], tau: float
) -> list[np.ndarray]:
    """Blend target <- tau * online + (1 - tau) * target, in place."""
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must be in (0, 1]")
    for t, o in zip(target_params, online_params):
        t *= 1.0 - tau
        t += tau * o
    return list(target_params)


def clone_net(net: DenseNet) -> DenseNet:
    return DenseNet(
        net.layer_sizes,
        [w.copy() for w in net.weights],
        [b.copy() for b in net.biases],
        net.heads,
    )


def net_to_doc(net: DenseNet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": list(net.layer_sizes),
        "heads": [[k, w] for k, w in net.heads],
        "params": [
            {"shape": list(p.shape), "data": p.reshape(-1).tolist()} for p in net.params()
        ],
    }


def net_from_doc(doc: dict) -> DenseNet:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    sizes = tuple(doc["layer_sizes"])
    heads = tuple((k, w) for k, w in doc["heads"])
    params = [np.array(p["data"], dtype=float).reshape(p["shape"]) for p in doc["params"]]
    weights = params[0::2]
    biases = params[1::2]
    return DenseNet(sizes, weights, biases, heads)


def save_nets(path: str | Path, nets: dict[str, DenseNet], extra: dict | None = None) -> None:
    doc = {"format": CHECKPOINT_FORMAT, "nets": {k: net_to_doc(n) for k, n in sorted(nets.items())}}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_nets(path: str | Path) -> tuple[dict[str, DenseNet], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    return {k: net_from_doc(d) for k, d in doc["nets"].items()}, doc.get("extra", {})
