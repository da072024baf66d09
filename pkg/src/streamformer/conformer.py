"""Conformer blocks and the causal streaming encoder.

A block applies, in order: feed-forward, convolution, self-attention,
feed-forward, and a closing layernorm. Every module is pre-normed; the
feed-forward modules use a half-step residual, convolution and
attention use full residuals. Blocks below ``conv_only_blocks`` drop
the self-attention module entirely and keep everything else.

Weights are stored as float32 (the on-disk container format); forward
passes compute in the dtype of the input, upcasting weights on the fly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import flops
from . import numerics
from .attention import (
    AttentionParams,
    KernelSpec,
    explicit_local_causal_attention,
    performer_attention,
)

ATTENTION_KINDS = ("explicit", "performer")


@dataclass(frozen=True)
class KernelConfig:
    """Feature-map knobs for performer-style attention.

    ``feature_dim`` of 0 resolves to the head width.
    """

    kind: str = "relu"
    use_affine: bool = True
    feature_dim: int = 0


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 144
    model_dim: int = 512
    total_blocks: int = 12
    conv_only_blocks: int = 0
    ff_expansion: int = 2
    heads: int = 8
    conv_kernel: int = 15
    attn_left_context: int = 23
    attention_kind: str = "explicit"
    kernel: KernelConfig = field(default_factory=KernelConfig)
    layernorm_eps: float = 1e-5
    seed: int = 12345

    def validate(self) -> "EncoderConfig":
        if self.input_dim < 1 or self.model_dim < 1:
            raise ValueError("input_dim and model_dim must be positive")
        if not 0 <= self.conv_only_blocks <= self.total_blocks:
            raise ValueError(
                f"conv_only_blocks={self.conv_only_blocks} outside 0..total_blocks="
                f"{self.total_blocks}"
            )
        if self.total_blocks < 1:
            raise ValueError("total_blocks must be >= 1")
        if self.ff_expansion < 1:
            raise ValueError("ff_expansion must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.conv_kernel < 1:
            raise ValueError("conv_kernel must be >= 1")
        if self.attn_left_context < 0:
            raise ValueError("attn_left_context must be >= 0")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ValueError(
                f"attention_kind {self.attention_kind!r} not one of {ATTENTION_KINDS}"
            )
        if self.kernel.feature_dim < 0:
            raise ValueError("kernel feature_dim must be >= 0")
        if self.layernorm_eps <= 0:
            raise ValueError("layernorm_eps must be positive")
        # constructing a throwaway spec validates the kernel kind
        KernelSpec(self.kernel.kind) if self.attention_kind == "performer" else None
        return self

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def feature_dim(self) -> int:
        return self.kernel.feature_dim if self.kernel.feature_dim > 0 else self.head_dim

    @property
    def attention_blocks(self) -> int:
        return self.total_blocks - self.conv_only_blocks

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "model_dim": self.model_dim,
            "total_blocks": self.total_blocks,
            "conv_only_blocks": self.conv_only_blocks,
            "ff_expansion": self.ff_expansion,
            "heads": self.heads,
            "conv_kernel": self.conv_kernel,
            "attn_left_context": self.attn_left_context,
            "attention_kind": self.attention_kind,
            "kernel": {
                "kind": self.kernel.kind,
                "use_affine": self.kernel.use_affine,
                "feature_dim": self.kernel.feature_dim,
            },
            "layernorm_eps": self.layernorm_eps,
            "seed": self.seed,
        }

    def with_overrides(self, **kwargs) -> "EncoderConfig":
        kernel_kw = kwargs.pop("kernel", None)
        cfg = replace(self, **kwargs)
        if kernel_kw is not None:
            cfg = replace(cfg, kernel=replace(cfg.kernel, **kernel_kw))
        return cfg


@dataclass
class LayerNormWeights:
    gain: np.ndarray
    bias: np.ndarray


@dataclass
class FeedForwardWeights:
    norm: LayerNormWeights
    w_in: np.ndarray  # (d, F)
    b_in: np.ndarray
    w_out: np.ndarray  # (F, d)
    b_out: np.ndarray


@dataclass
class ConvWeights:
    norm_in: LayerNormWeights
    pw_in: np.ndarray  # (d, 2d)
    pw_in_bias: np.ndarray
    dw: np.ndarray  # (k, d)
    dw_bias: np.ndarray
    norm_mid: LayerNormWeights
    pw_out: np.ndarray  # (d, d)
    pw_out_bias: np.ndarray


@dataclass
class AttentionWeights:
    norm: LayerNormWeights
    params: AttentionParams
    kernel: KernelSpec | None  # performer blocks only


@dataclass
class BlockWeights:
    ff1: FeedForwardWeights
    conv: ConvWeights
    attn: AttentionWeights | None  # absent iff the block is conv-only
    ff2: FeedForwardWeights
    norm_out: LayerNormWeights


@dataclass
class EncoderWeights:
    in_proj: np.ndarray  # (input_dim, d)
    in_bias: np.ndarray
    blocks: list[BlockWeights]


def init_weights(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderWeights:
    """Scaled-uniform init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    biases zero, norm gains one. Deterministic in the generator state."""
    cfg.validate()
    return _make_weights(cfg, rng)


def _make_weights(
    cfg: EncoderConfig, rng: np.random.Generator | None, relpos: bool = True
) -> EncoderWeights:
    d = cfg.model_dim
    F = cfg.ff_expansion * d
    k = cfg.conv_kernel

    def w(shape, fan_in):
        if rng is None:
            return np.zeros(shape, np.float32)
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    def zeros(*shape):
        return np.zeros(shape, np.float32)

    def ln():
        return LayerNormWeights(np.ones(d, np.float32), zeros(d))

    def ff():
        return FeedForwardWeights(ln(), w((d, F), d), zeros(F), w((F, d), F), zeros(d))

    def conv():
        return ConvWeights(
            ln(), w((d, 2 * d), d), zeros(2 * d), w((k, d), k), zeros(d),
            ln(), w((d, d), d), zeros(d),
        )

    def attn():
        bias = None
        if relpos and cfg.attention_kind == "explicit":
            bias = zeros(cfg.heads, cfg.attn_left_context + 1)
        params = AttentionParams(
            w((d, d), d), w((d, d), d), w((d, d), d), w((d, d), d),
            cfg.heads, relpos_bias=bias,
        )
        kern = None
        if cfg.attention_kind == "performer":
            if cfg.kernel.use_affine:
                r = cfg.feature_dim
                kern = KernelSpec(cfg.kernel.kind, w((r, cfg.head_dim), cfg.head_dim), zeros(r))
            else:
                kern = KernelSpec(cfg.kernel.kind)
        return AttentionWeights(ln(), params, kern)

    in_proj = w((cfg.input_dim, d), cfg.input_dim)
    in_bias = zeros(d)
    blocks = []
    for i in range(cfg.total_blocks):
        has_attn = i >= cfg.conv_only_blocks
        blocks.append(BlockWeights(ff(), conv(), attn() if has_attn else None, ff(), ln()))
    return EncoderWeights(in_proj, in_bias, blocks)


def named_tensors(weights: EncoderWeights):
    """Yield (name, array) in a stable order; drives save/load and the
    materialized parameter census."""
    yield "input/proj", weights.in_proj
    yield "input/bias", weights.in_bias
    for i, blk in enumerate(weights.blocks):
        p = f"block{i:02d}"
        for tag, ffw in (("ff1", blk.ff1), ("ff2", blk.ff2)):
            yield f"{p}/{tag}/norm/gain", ffw.norm.gain
            yield f"{p}/{tag}/norm/bias", ffw.norm.bias
            yield f"{p}/{tag}/w_in", ffw.w_in
            yield f"{p}/{tag}/b_in", ffw.b_in
            yield f"{p}/{tag}/w_out", ffw.w_out
            yield f"{p}/{tag}/b_out", ffw.b_out
        cw = blk.conv
        yield f"{p}/conv/norm_in/gain", cw.norm_in.gain
        yield f"{p}/conv/norm_in/bias", cw.norm_in.bias
        yield f"{p}/conv/pw_in", cw.pw_in
        yield f"{p}/conv/pw_in_bias", cw.pw_in_bias
        yield f"{p}/conv/dw", cw.dw
        yield f"{p}/conv/dw_bias", cw.dw_bias
        yield f"{p}/conv/norm_mid/gain", cw.norm_mid.gain
        yield f"{p}/conv/norm_mid/bias", cw.norm_mid.bias
        yield f"{p}/conv/pw_out", cw.pw_out
        yield f"{p}/conv/pw_out_bias", cw.pw_out_bias
        if blk.attn is not None:
            aw = blk.attn
            yield f"{p}/attn/norm/gain", aw.norm.gain
            yield f"{p}/attn/norm/bias", aw.norm.bias
            yield f"{p}/attn/wq", aw.params.wq
            yield f"{p}/attn/wk", aw.params.wk
            yield f"{p}/attn/wv", aw.params.wv
            yield f"{p}/attn/wo", aw.params.wo
            if aw.params.relpos_bias is not None:
                yield f"{p}/attn/relpos_bias", aw.params.relpos_bias
            if aw.kernel is not None and aw.kernel.use_affine:
                yield f"{p}/attn/kernel_w", aw.kernel.weight
                yield f"{p}/attn/kernel_b", aw.kernel.bias
        yield f"{p}/norm_out/gain", blk.norm_out.gain
        yield f"{p}/norm_out/bias", blk.norm_out.bias


def parameter_count(weights: EncoderWeights) -> int:
    """Materialized scalar census over every tensor."""
    return sum(arr.size for _, arr in named_tensors(weights))


def check_weights(weights: EncoderWeights, cfg: EncoderConfig) -> None:
    """Cheap structural consistency check between weights and config."""
    d = cfg.model_dim
    if weights.in_proj.shape != (cfg.input_dim, d):
        raise ValueError(
            f"input projection {weights.in_proj.shape} does not match config "
            f"({cfg.input_dim}, {d})"
        )
    if len(weights.blocks) != cfg.total_blocks:
        raise ValueError(
            f"{len(weights.blocks)} blocks in weights, config wants {cfg.total_blocks}"
        )
    for i, blk in enumerate(weights.blocks):
        want_attn = i >= cfg.conv_only_blocks
        if (blk.attn is not None) != want_attn:
            raise ValueError(f"block {i}: attention weights {'missing' if want_attn else 'present'}")
        if blk.ff1.w_in.shape != (d, cfg.ff_expansion * d):
            raise ValueError(f"block {i}: ff width {blk.ff1.w_in.shape} mismatches config")
        if blk.conv.dw.shape != (cfg.conv_kernel, d):
            raise ValueError(f"block {i}: conv kernel {blk.conv.dw.shape} mismatches config")


def _cast(arr: np.ndarray, dtype) -> np.ndarray:
    return arr.astype(dtype, copy=False)


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = numerics.matmul(x, _cast(w, x.dtype))
    flops.charge(y.size, "bias")
    return y + _cast(b, x.dtype)


def _ln(x: np.ndarray, w: LayerNormWeights, eps: float) -> np.ndarray:
    return numerics.layernorm(x, _cast(w.gain, x.dtype), _cast(w.bias, x.dtype), eps)


def ff_module(x: np.ndarray, w: FeedForwardWeights, eps: float = 1e-5) -> np.ndarray:
    """Pre-normed feed-forward with swish and a half-step residual."""
    h = _ln(x, w.norm, eps)
    h = _affine(h, w.w_in, w.b_in)
    h = numerics.activation(h, "swish")
    h = _affine(h, w.w_out, w.b_out)
    flops.charge(2 * h.size, "residual")
    return x + 0.5 * h


def conv_module(x: np.ndarray, w: ConvWeights, eps: float = 1e-5) -> np.ndarray:
    """Pointwise expand, GLU gate, depthwise causal conv, norm, swish,
    pointwise project; full residual. Strictly causal."""
    h = _ln(x, w.norm_in, eps)
    h = _affine(h, w.pw_in, w.pw_in_bias)
    h = numerics.activation(h, "glu-gate")
    h = numerics.depthwise_causal_conv(h, _cast(w.dw, x.dtype), _cast(w.dw_bias, x.dtype))
    h = _ln(h, w.norm_mid, eps)
    h = numerics.activation(h, "swish")
    h = _affine(h, w.pw_out, w.pw_out_bias)
    flops.charge(h.size, "residual")
    return x + h


def attention_module(x: np.ndarray, w: AttentionWeights, cfg: EncoderConfig) -> np.ndarray:
    """Pre-normed self-attention with a full residual."""
    h = _ln(x, w.norm, cfg.layernorm_eps)
    if cfg.attention_kind == "explicit":
        a = explicit_local_causal_attention(h, w.params, cfg.attn_left_context)
    else:
        a = performer_attention(h, w.params, w.kernel, causal=True)
    flops.charge(a.size, "residual")
    return x + a


def conformer_block(x: np.ndarray, w: BlockWeights, cfg: EncoderConfig) -> np.ndarray:
    if w.attn is None:
        raise ValueError("conformer_block requires attention weights; use conv_only_block")
    eps = cfg.layernorm_eps
    x = ff_module(x, w.ff1, eps)
    x = conv_module(x, w.conv, eps)
    x = attention_module(x, w.attn, cfg)
    x = ff_module(x, w.ff2, eps)
    return _ln(x, w.norm_out, eps)


def conv_only_block(x: np.ndarray, w: BlockWeights, cfg: EncoderConfig) -> np.ndarray:
    if w.attn is not None:
        raise ValueError("conv_only_block got attention weights")
    eps = cfg.layernorm_eps
    x = ff_module(x, w.ff1, eps)
    x = conv_module(x, w.conv, eps)
    x = ff_module(x, w.ff2, eps)
    return _ln(x, w.norm_out, eps)


def encoder_forward(
    features: np.ndarray, weights: EncoderWeights, cfg: EncoderConfig
) -> np.ndarray:
    """Full-sequence forward pass: input projection, conv-only blocks,
    then full conformer blocks. Output is (T, model_dim)."""
    cfg.validate()
    check_weights(weights, cfg)
    if features.ndim != 2 or features.shape[1] != cfg.input_dim:
        raise ValueError(
            f"features {features.shape} do not match input_dim {cfg.input_dim}"
        )
    if features.dtype not in (np.float32, np.float64):
        features = features.astype(np.float64)
    x = _affine(features, weights.in_proj, weights.in_bias)
    for blk in weights.blocks:
        if blk.attn is None:
            x = conv_only_block(x, blk, cfg)
        else:
            x = conformer_block(x, blk, cfg)
    return x
