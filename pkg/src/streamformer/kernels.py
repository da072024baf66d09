"""Hot inner-loop kernels, in numba and pure-numpy variants.

Each kernel exists twice with identical semantics; `backend` picks the
active pair at import time. All float arguments of one call must share
a dtype (float32 or float64) and be C-contiguous.

Shapes use: H heads, T frames, r kernel features, hd head width,
dc = hd + 1 (value columns plus a ones column for the normalizer).
"""

from __future__ import annotations

import math

import numpy as np

from .backend import NUMBA_ENABLED


def _causal_prefix_attention_np(g, qp, kp, c):
    """Prefix-sum linear attention, raw numerator/denominator rows.

    g: (H, r, dc) running sum of outer(key features, [value, 1]); updated
    in place so a caller can carry it across chunks. Returns (H, T, dc)
    where out[h, t] = g_after_t[h].T @ qp[h, t].
    """
    H, T, r = qp.shape
    dc = c.shape[2]
    out = np.empty((H, T, dc), dtype=qp.dtype)
    for t in range(T):
        g += kp[:, t, :, None] * c[:, t, None, :]
        out[:, t, :] = np.einsum("hab,ha->hb", g, qp[:, t, :])
    return out


def _local_window_attention_np(q, k_all, v_all, bias, heads, left, cache_len):
    """Sliding-window causal softmax attention over concatenated history.

    q: (c, d) queries for the chunk; k_all/v_all: (cache_len + c, d) with
    the cached frames first; bias: (heads, left + 1) additive logit bias
    indexed by frame offset. Output position i attends rows
    max(0, cache_len + i - left) .. cache_len + i.
    """
    cq, d = q.shape
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)
    out = np.empty((cq, d), dtype=q.dtype)
    for i in range(cq):
        t = cache_len + i
        lo = max(0, t - left)
        offsets = t - np.arange(lo, t + 1)
        for h in range(heads):
            sl = slice(h * hd, (h + 1) * hd)
            logits = k_all[lo : t + 1, sl] @ q[i, sl] * scale + bias[h, offsets]
            w = np.exp(logits - logits.max())
            out[i, sl] = (w @ v_all[lo : t + 1, sl]) / w.sum()
    return out


def _depthwise_conv_np(x, w, b, start):
    """Depthwise causal convolution with implicit zero left-padding.

    x: (T, d), w: (k, d) with row k-1 multiplying the current frame,
    b: (d,). Emits rows start..T-1 only (start > 0 lets streaming skip
    history rows already emitted).
    """
    T, d = x.shape
    k = w.shape[0]
    out = np.zeros((T - start, d), dtype=x.dtype)
    for i in range(k):
        shift = k - 1 - i
        lo = max(start, shift)
        if lo >= T:
            continue
        out[lo - start :] += w[i] * x[lo - shift : T - shift]
    out += b
    return out


if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True)
    def _causal_prefix_attention_nb(g, qp, kp, c):  # pragma: no cover - jit
        H, T, r = qp.shape
        dc = c.shape[2]
        out = np.empty((H, T, dc), dtype=qp.dtype)
        for h in range(H):
            for t in range(T):
                for a in range(r):
                    kf = kp[h, t, a]
                    for v in range(dc):
                        g[h, a, v] += kf * c[h, t, v]
                for v in range(dc):
                    acc = 0.0
                    for a in range(r):
                        acc += g[h, a, v] * qp[h, t, a]
                    out[h, t, v] = acc
        return out

    @njit(cache=True)
    def _local_window_attention_nb(
        q, k_all, v_all, bias, heads, left, cache_len
    ):  # pragma: no cover - jit
        cq, d = q.shape
        hd = d // heads
        scale = 1.0 / math.sqrt(hd)
        out = np.empty((cq, d), dtype=q.dtype)
        logits = np.empty(left + 1, dtype=np.float64)
        for i in range(cq):
            t = cache_len + i
            lo = t - left
            if lo < 0:
                lo = 0
            width = t - lo + 1
            for h in range(heads):
                base = h * hd
                mx = -np.inf
                for j in range(width):
                    acc = 0.0
                    for e in range(hd):
                        acc += q[i, base + e] * k_all[lo + j, base + e]
                    val = acc * scale + bias[h, t - lo - j]
                    logits[j] = val
                    if val > mx:
                        mx = val
                total = 0.0
                for j in range(width):
                    logits[j] = np.exp(logits[j] - mx)
                    total += logits[j]
                for e in range(hd):
                    acc = 0.0
                    for j in range(width):
                        acc += logits[j] * v_all[lo + j, base + e]
                    out[i, base + e] = acc / total
        return out

    @njit(cache=True)
    def _depthwise_conv_nb(x, w, b, start):  # pragma: no cover - jit
        T, d = x.shape
        k = w.shape[0]
        out = np.empty((T - start, d), dtype=x.dtype)
        for t in range(start, T):
            for ch in range(d):
                acc = 0.0
                for i in range(k):
                    src = t - (k - 1) + i
                    if src >= 0:
                        acc += w[i, ch] * x[src, ch]
                out[t - start, ch] = acc + b[ch]
        return out

    causal_prefix_attention = _causal_prefix_attention_nb
    local_window_attention = _local_window_attention_nb
    depthwise_conv = _depthwise_conv_nb
else:
    causal_prefix_attention = _causal_prefix_attention_np
    local_window_attention = _local_window_attention_np
    depthwise_conv = _depthwise_conv_np
