"""Attention mechanisms.

Two families with the same call shape:

* explicit windowed causal softmax attention with a learned per-head
  position bias over the lookback window (the baseline); and
* kernel-feature linear attention that never materializes the T x T
  attention matrix: bidirectional via the factored product
  D^-1 (Q' ((K')^T V)), causal via a running prefix sum of
  outer(key features, [value, 1]) applied to each query's features.

The causal variant keeps O(r * (head_dim + 1)) state per head, so its
per-frame cost is independent of the stream position.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import flops
from . import kernels
from . import numerics

KERNEL_KINDS = ("relu", "softplus", "exp", "elu", "quartic")

DEFAULT_EPS = 1e-6

_FAULT_NAMES = ("performer-normalization",)
_FAULTS: set[str] = set()


def inject_fault(name: str) -> None:
    """Deliberately corrupt an internal computation (self-check support)."""
    if name not in _FAULT_NAMES:
        raise ValueError(f"unknown fault {name!r}; known: {_FAULT_NAMES}")
    _FAULTS.add(name)


def clear_faults() -> None:
    _FAULTS.clear()


@dataclass(frozen=True)
class KernelSpec:
    """Feature-map choice for linear attention.

    ``weight``/``bias`` (shape (r', head_dim) and (r',)) add a trainable
    affine transform before the nonlinearity; both present or both absent.
    """

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if (self.weight is None) != (self.bias is None):
            raise ValueError("kernel affine weight and bias must be given together")
        if self.weight is not None:
            if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
                raise ValueError(
                    f"kernel affine shapes {self.weight.shape}/{self.bias.shape} inconsistent"
                )
        if self.kind == "elu":
            warnings.warn(
                "elu kernel features can be negative; normalized attention "
                "denominators may vanish (eps clamp will engage)",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def use_affine(self) -> bool:
        return self.weight is not None

    def feature_dim(self, head_dim: int) -> int:
        return self.weight.shape[0] if self.weight is not None else head_dim


@dataclass
class AttentionParams:
    """Projection matrices for one multi-head attention layer."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    heads: int
    relpos_bias: np.ndarray | None = None  # (heads, left_context + 1)

    def __post_init__(self) -> None:
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            m = getattr(self, name)
            if m.shape != (d, d):
                raise ValueError(f"attention projection {name} must be {d}x{d}, got {m.shape}")
        if d % self.heads != 0:
            raise ValueError(f"model dim {d} not divisible by {self.heads} heads")

    @property
    def model_dim(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.wq.shape[0] // self.heads


@dataclass
class PrefixSumState:
    """Running sum of outer(key features, [value, 1]) for one head."""

    G: np.ndarray  # (features, head_dim + 1)
    frames_seen: int = 0

    @classmethod
    def fresh(cls, features: int, head_dim: int, dtype=np.float64) -> "PrefixSumState":
        return cls(G=np.zeros((features, head_dim + 1), dtype=dtype))

    @property
    def scalars(self) -> int:
        return self.G.size


@dataclass
class LocalKVCache:
    """Bounded key/value history; strictly oldest-first eviction.

    Rows are kept oldest-to-newest; ``dim`` is head_dim for a per-head
    cache or the full model width when heads are stored concatenated.
    """

    window: int
    dim: int
    dtype: np.dtype = np.float64
    keys: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    size: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.keys = np.zeros((self.window, self.dim), dtype=self.dtype)
        self.values = np.zeros((self.window, self.dim), dtype=self.dtype)

    def view(self) -> tuple[np.ndarray, np.ndarray]:
        return self.keys[: self.size], self.values[: self.size]

    def push(self, k_rows: np.ndarray, v_rows: np.ndarray) -> None:
        if self.window == 0:
            return
        m = k_rows.shape[0]
        if m >= self.window:
            self.keys[:] = k_rows[-self.window :]
            self.values[:] = v_rows[-self.window :]
            self.size = self.window
            return
        keep = min(self.size, self.window - m)
        if keep:
            self.keys[:keep] = self.keys[self.size - keep : self.size].copy()
            self.values[:keep] = self.values[self.size - keep : self.size].copy()
        self.keys[keep : keep + m] = k_rows
        self.values[keep : keep + m] = v_rows
        self.size = keep + m

    @property
    def scalars_held(self) -> int:
        return 2 * self.size * self.dim


def feature_map(x: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Map rows of x through the kernel feature function phi."""
    rows, in_dim = x.shape
    out_dim = spec.feature_dim(in_dim)
    flops.charge(
        flops.feature_map(rows, in_dim, out_dim, spec.kind, spec.use_affine), "feature_map"
    )
    if spec.use_affine:
        if spec.weight.shape[1] != in_dim:
            raise ValueError(
                f"kernel affine expects {spec.weight.shape[1]} input columns, got {in_dim}"
            )
        x = x @ spec.weight.T.astype(x.dtype) + spec.bias.astype(x.dtype)
    return _apply_kernel(x, spec.kind)


def _apply_kernel(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    if kind == "exp":
        return np.exp(z)
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(z))
    if kind == "quartic":
        return np.square(np.square(z))
    raise ValueError(f"unknown kernel kind {kind!r}")


def _finish(num: np.ndarray, den: np.ndarray, eps: float) -> np.ndarray:
    """Divide numerator rows by clamped denominators.

    Denominators with |den| < eps are replaced by eps carrying the
    original sign (exact zeros go to +eps).
    """
    if "performer-normalization" in _FAULTS:
        den = den * 1.05
    safe = np.where(den >= 0, eps, -eps)
    den = np.where(np.abs(den) < eps, safe, den)
    return num / den[..., None]


def performer_bidirectional(
    qp: np.ndarray, kp: np.ndarray, v: np.ndarray, eps: float = DEFAULT_EPS
) -> np.ndarray:
    """Full-context linear attention in the factored order.

    Computes D^-1 (Q' ((K')^T V)) with D = diag(Q' ((K')^T 1)); the
    T x T attention matrix is never formed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    kv = numerics.matmul(kp.T, v)
    ksum = kp.sum(axis=0)
    num = numerics.matmul(qp, kv)
    den = qp @ ksum
    flops.charge(2 * qp.size + den.size, "performer_norm")
    return _finish(num, den, eps)


def _causal_core(g: np.ndarray, qps: np.ndarray, kps: np.ndarray, cs: np.ndarray, eps: float):
    """Shared prefix-sum pass: (H, T, r) features -> (H, T, head_dim)."""
    heads, T, r = qps.shape
    hd = cs.shape[2] - 1
    flops.charge(T * flops.prefix_attention_step(heads, r, hd), "prefix_attention")
    raw = kernels.causal_prefix_attention(g, qps, kps, cs)
    return _finish(raw[:, :, :hd], raw[:, :, hd], eps)


def performer_causal(
    qp: np.ndarray, kp: np.ndarray, v: np.ndarray, eps: float = DEFAULT_EPS
) -> np.ndarray:
    """Causal linear attention via a prefix sum; O(T) time, O(1) state.

    Equals row-normalized tril(Q'(K')^T) V without materializing the
    triangular matrix.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if qp.shape != kp.shape or v.shape[0] != qp.shape[0]:
        raise ValueError(f"inconsistent shapes qp={qp.shape} kp={kp.shape} v={v.shape}")
    dtype = qp.dtype
    ones = np.ones((v.shape[0], 1), dtype=dtype)
    c = np.ascontiguousarray(np.concatenate([v, ones], axis=1))
    g = np.zeros((1, qp.shape[1], v.shape[1] + 1), dtype=dtype)
    out = _causal_core(
        g, np.ascontiguousarray(qp[None]), np.ascontiguousarray(kp[None]), c[None], eps
    )
    return out[0]


def performer_causal_step(
    state: PrefixSumState,
    q_feat: np.ndarray,
    k_feat: np.ndarray,
    v: np.ndarray,
    eps: float = DEFAULT_EPS,
) -> tuple[np.ndarray, PrefixSumState]:
    """Advance the prefix sum by one frame and read out its attention.

    Mutates ``state`` in place (single-owner) and returns it alongside
    the output row. Folding this step over a sequence reproduces
    :func:`performer_causal` row for row.
    """
    r, dc = state.G.shape
    if q_feat.shape != (r,) or k_feat.shape != (r,):
        raise ValueError(f"feature vectors must have shape ({r},)")
    if v.shape != (dc - 1,):
        raise ValueError(f"value must have shape ({dc - 1},), got {v.shape}")
    dtype = state.G.dtype
    c = np.empty((1, 1, dc), dtype=dtype)
    c[0, 0, :-1] = v
    c[0, 0, -1] = 1.0
    qp = np.ascontiguousarray(q_feat.astype(dtype, copy=False).reshape(1, 1, r))
    kp = np.ascontiguousarray(k_feat.astype(dtype, copy=False).reshape(1, 1, r))
    out = _causal_core(state.G[None], qp, kp, c, eps)
    state.frames_seen += 1
    return out[0, 0], state


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(T, d) -> (heads, T, d // heads), contiguous per head."""
    T, d = x.shape
    hd = d // heads
    return np.ascontiguousarray(x.reshape(T, heads, hd).transpose(1, 0, 2))


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(heads, T, hd) -> (T, heads * hd)."""
    heads, T, hd = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(T, heads * hd))


def windowed_attention(
    q: np.ndarray,
    k_all: np.ndarray,
    v_all: np.ndarray,
    bias: np.ndarray,
    heads: int,
    left: int,
    cache_len: int = 0,
) -> np.ndarray:
    """Windowed softmax attention over [cached history; chunk] rows."""
    cq = q.shape[0]
    hd = q.shape[1] // heads
    positions = cache_len + np.arange(cq)
    windows = np.minimum(positions, left) + 1
    flops.charge(int(windows.sum()) * heads * (4 * hd + 7), "window_attention")
    return kernels.local_window_attention(
        np.ascontiguousarray(q),
        np.ascontiguousarray(k_all),
        np.ascontiguousarray(v_all),
        np.ascontiguousarray(bias),
        heads,
        left,
        cache_len,
    )


def explicit_local_causal_attention(
    x: np.ndarray, params: AttentionParams, left_context: int
) -> np.ndarray:
    """Multi-head softmax attention over the trailing window of frames.

    Each output row t attends rows max(0, t - left_context)..t; a learned
    per-head bias over window offsets is added to the logits.
    """
    if left_context < 0:
        raise ValueError("left_context must be >= 0")
    q = numerics.matmul(x, params.wq.astype(x.dtype, copy=False))
    k = numerics.matmul(x, params.wk.astype(x.dtype, copy=False))
    v = numerics.matmul(x, params.wv.astype(x.dtype, copy=False))
    bias = _window_bias(params, left_context, x.dtype)
    ctx = windowed_attention(q, k, v, bias, params.heads, left_context)
    return numerics.matmul(ctx, params.wo.astype(x.dtype, copy=False))


def _window_bias(params: AttentionParams, left: int, dtype) -> np.ndarray:
    if params.relpos_bias is None:
        return np.zeros((params.heads, left + 1), dtype=dtype)
    if params.relpos_bias.shape != (params.heads, left + 1):
        raise ValueError(
            f"relpos bias shape {params.relpos_bias.shape} does not match "
            f"({params.heads}, {left + 1})"
        )
    return params.relpos_bias.astype(dtype, copy=False)


def performer_attention(
    x: np.ndarray,
    params: AttentionParams,
    spec: KernelSpec,
    causal: bool,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Multi-head linear attention; no position bias (the kernel
    factorization cannot carry a per-pair term)."""
    q = numerics.matmul(x, params.wq.astype(x.dtype, copy=False))
    k = numerics.matmul(x, params.wk.astype(x.dtype, copy=False))
    v = numerics.matmul(x, params.wv.astype(x.dtype, copy=False))
    heads = params.heads
    hd = params.head_dim
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    vh = split_heads(v, heads)
    qps = np.stack([feature_map(qh[h], spec) for h in range(heads)])
    kps = np.stack([feature_map(kh[h], spec) for h in range(heads)])
    if causal:
        T = x.shape[0]
        ones = np.ones((heads, T, 1), dtype=x.dtype)
        cs = np.ascontiguousarray(np.concatenate([vh, ones], axis=2))
        g = np.zeros((heads, qps.shape[2], hd + 1), dtype=x.dtype)
        ctx = _causal_core(g, np.ascontiguousarray(qps), np.ascontiguousarray(kps), cs, eps)
    else:
        ctx = np.stack(
            [performer_bidirectional(qps[h], kps[h], vh[h], eps) for h in range(heads)]
        )
    return numerics.matmul(merge_heads(ctx), params.wo.astype(x.dtype, copy=False))
