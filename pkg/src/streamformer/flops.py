"""Floating-point operation accounting.

One set of per-primitive cost formulas is shared by the analytic cost
model and by the instrumented forward pass, so the two routes agree on
*pricing* by construction and any disagreement localizes a structural
error (a missed module, a wrong shape, a window that never filled).

Conventions: a multiply-accumulate counts as 2 flops; activations,
norms, and softmax count 1 flop per scalar op.
"""

from __future__ import annotations

from contextlib import contextmanager

# cost of f(z) per scalar, by activation / kernel kind
ACTIVATION_COST = {
    "relu": 1,
    "sigmoid": 4,  # negate, exp, add 1, divide
    "swish": 5,  # sigmoid + multiply
    "exp": 1,
    "softplus": 3,  # exp, add 1, log
    "elu": 2,  # branch on sign, exp - 1 on the negative side
    "quartic": 2,  # two squarings
}


def matmul(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def bias_add(n: int) -> int:
    return n


def elementwise(n: int) -> int:
    """Residual adds, scalings, elementwise products."""
    return n


def activation(n: int, kind: str) -> int:
    return n * ACTIVATION_COST[kind]


def glu(n_out: int) -> int:
    """Gated linear unit producing n_out values from 2*n_out inputs."""
    return n_out * (ACTIVATION_COST["sigmoid"] + 1)


def layernorm(rows: int, dim: int) -> int:
    # mean, center, variance, rsqrt+scale, affine
    return rows * (7 * dim + 2)


def softmax(rows: int, width: int) -> int:
    # max, shift, exp, sum, divide
    return rows * 5 * width


def depthwise_conv(frames: int, kernel: int, channels: int) -> int:
    # per channel: kernel multiplies, kernel-1 adds, 1 bias add
    return frames * channels * 2 * kernel


def local_attention_window(heads: int, window: int, head_dim: int) -> int:
    """One frame of windowed softmax attention, all heads.

    Per head: query-key dots, logit scale, position-bias add, softmax,
    weighted value sum. ``window`` includes the current frame.
    """
    per_head = window * (4 * head_dim + 7)
    return heads * per_head


def feature_map(rows: int, in_dim: int, out_dim: int, kind: str, affine: bool) -> int:
    cost = rows * out_dim * ACTIVATION_COST[kind]
    if affine:
        cost += matmul(rows, in_dim, out_dim) + rows * bias_add(out_dim)
    return cost


def prefix_attention_step(heads: int, features: int, head_dim: int) -> int:
    """One frame of causal prefix-sum attention, all heads.

    Per head: outer-product accumulate into the running state, apply the
    state to the query features, then normalize (divide + clamp check).
    """
    dc = head_dim + 1
    per_head = 2 * features * dc + 2 * features * dc + head_dim + 1
    return heads * per_head


class FlopCounter:
    """Tally of flops charged while a counting context is active."""

    def __init__(self) -> None:
        self.total = 0
        self.by_label: dict[str, int] = {}

    def add(self, n: int, label: str) -> None:
        self.total += n
        self.by_label[label] = self.by_label.get(label, 0) + n


_ACTIVE: FlopCounter | None = None


def charge(n: int, label: str = "other") -> None:
    """Charge ``n`` flops to the active counter, if any.

    No-op outside a :func:`counting` context, so instrumented code paths
    cost nothing in normal runs. Counting is single-threaded by design.
    """
    if _ACTIVE is not None:
        _ACTIVE.add(n, label)


@contextmanager
def counting():
    """Activate a fresh :class:`FlopCounter` and yield it."""
    global _ACTIVE
    prev = _ACTIVE
    counter = FlopCounter()
    _ACTIVE = counter
    try:
        yield counter
    finally:
        _ACTIVE = prev
