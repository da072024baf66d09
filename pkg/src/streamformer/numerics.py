"""Minimal dense numeric primitives shared by every higher module.

All functions are pure, deterministic, and operate on 2-D row-major
numpy arrays ("T frames by d features" throughout). Test and oracle
paths run in float64; benchmark paths may run in float32. Each
primitive charges its cost to the active flop counter, if any.
"""

from __future__ import annotations

import numpy as np

from . import flops
from . import kernels

ACTIVATION_KINDS = ("swish", "relu", "glu-gate", "sigmoid")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seed gives an identical stream."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    flops.charge(flops.matmul(a.shape[0], a.shape[1], b.shape[1]), "matmul")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    flops.charge(flops.softmax(m.shape[0], m.shape[1]), "softmax")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-row standardization followed by an affine transform."""
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(
            f"layernorm: gamma/beta of length {gamma.shape}/{beta.shape} "
            f"do not match {x.shape[1]} columns"
        )
    if eps <= 0:
        raise ValueError("layernorm: eps must be positive")
    flops.charge(flops.layernorm(x.shape[0], x.shape[1]), "layernorm")
    mean = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def depthwise_causal_conv(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, start: int = 0
) -> np.ndarray:
    """Per-channel causal convolution; output row t sees rows t-k+1..t.

    The input is implicitly left-padded with k-1 zero frames. ``start``
    skips emitting the first rows (used by the streaming path, where the
    leading rows are cached history that was already emitted).
    """
    if weights.ndim != 2 or weights.shape[1] != x.shape[1]:
        raise ValueError(
            f"depthwise_causal_conv: weights {weights.shape} do not match "
            f"{x.shape[1]} channels"
        )
    if bias.shape != (x.shape[1],):
        raise ValueError(f"depthwise_causal_conv: bias {bias.shape} mismatch")
    flops.charge(
        flops.depthwise_conv(x.shape[0] - start, weights.shape[0], x.shape[1]), "conv"
    )
    return kernels.depthwise_conv(
        np.ascontiguousarray(x), np.ascontiguousarray(weights), bias, start
    )


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise nonlinearity; 'glu-gate' halves the last axis."""
    if kind == "relu":
        flops.charge(flops.activation(x.size, "relu"), "activation")
        return np.maximum(x, 0)
    if kind == "sigmoid":
        flops.charge(flops.activation(x.size, "sigmoid"), "activation")
        return _sigmoid(x)
    if kind == "swish":
        flops.charge(flops.activation(x.size, "swish"), "activation")
        return x * _sigmoid(x)
    if kind == "glu-gate":
        if x.shape[-1] % 2 != 0:
            raise ValueError(f"glu-gate needs an even last axis, got {x.shape}")
        half = x.shape[-1] // 2
        flops.charge(flops.glu(x.size // 2), "activation")
        return x[..., :half] * _sigmoid(x[..., half:])
    raise ValueError(f"unknown activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
