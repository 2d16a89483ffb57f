"""Scaled dot-product attention, base layers, and the adapter-extended form.

All operations are pure functions over torch tensors shaped
[..., tokens, features]; leading batch dimensions broadcast. Weights are
plain tensor records so the same code serves inference, the denoiser's
layers, and gradient-checked training.

The adapter extension adds a second attention term to a host self-attention
layer: queries come from degraded-image features under the frozen query
projection, while fine-tuned key/value/output projections act on the
currently diffused features. With the output projection initialized to
zeros the extension is an exact no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


class AttentionShapeError(ValueError):
    pass


@dataclass
class AttentionWeights:
    """Projections of one attention layer.

    w_q: [d_model, d_attn]; w_k, w_v: [d_kv_in, d_attn] (d_kv_in equals
    d_model for self-attention, the context width for cross-attention);
    w_o: [d_attn, d_model]. d_attn must be divisible by head_count.
    """

    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    w_o: torch.Tensor
    head_count: int = 1

    def __post_init__(self):
        d_attn = self.w_q.shape[1]
        if self.w_k.shape[1] != d_attn or self.w_v.shape[1] != d_attn:
            raise AttentionShapeError("w_q/w_k/w_v must share their output width")
        if self.w_o.shape[0] != d_attn:
            raise AttentionShapeError("w_o input width must equal d_attn")
        if d_attn % self.head_count != 0:
            raise AttentionShapeError(
                f"d_attn {d_attn} not divisible by head_count {self.head_count}"
            )

    @property
    def d_attn(self) -> int:
        return self.w_q.shape[1]


@dataclass
class AdapterLayerParams:
    """Trainable extension of one self-attention layer: key, value, output."""

    w_k: torch.Tensor
    w_v: torch.Tensor
    w_o: torch.Tensor


# Adapter parameter set for a whole denoiser: one record per self-attention
# layer, keyed by that layer's index in network order.
AdapterParams = dict[int, AdapterLayerParams]


def _split_heads(x: torch.Tensor, head_count: int) -> torch.Tensor:
    # [..., tokens, d_attn] -> [..., head, tokens, d_k]
    *lead, tokens, d_attn = x.shape
    x = x.reshape(*lead, tokens, head_count, d_attn // head_count)
    return x.transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, heads, tokens, d_k = x.shape
    return x.transpose(-3, -2).reshape(*lead, tokens, heads * d_k)


def scaled_dot_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, head_count: int = 1
) -> torch.Tensor:
    """Per-head softmax(q k^T / sqrt(d_k)) v with heads concatenated."""
    if q.shape[-1] != k.shape[-1] or q.shape[-1] != v.shape[-1]:
        raise AttentionShapeError("q/k/v feature widths must match")
    if k.shape[-2] != v.shape[-2]:
        raise AttentionShapeError("k and v must have the same token count")
    d_attn = q.shape[-1]
    if d_attn % head_count != 0:
        raise AttentionShapeError(f"d_attn {d_attn} not divisible by {head_count} heads")
    qh = _split_heads(q, head_count)
    kh = _split_heads(k, head_count)
    vh = _split_heads(v, head_count)
    d_k = d_attn // head_count
    logits = qh @ kh.transpose(-2, -1) / math.sqrt(d_k)
    # max-subtraction keeps exp() in range without changing the softmax
    logits = logits - logits.max(dim=-1, keepdim=True).values
    weights = torch.softmax(logits, dim=-1)
    return _merge_heads(weights @ vh)


def self_attention_layer(z: torch.Tensor, w: AttentionWeights) -> torch.Tensor:
    """Attention(z w_q, z w_k, z w_v) w_o."""
    if z.shape[-1] != w.w_q.shape[0]:
        raise AttentionShapeError(
            f"token width {z.shape[-1]} does not match w_q input {w.w_q.shape[0]}"
        )
    att = scaled_dot_attention(z @ w.w_q, z @ w.w_k, z @ w.w_v, w.head_count)
    return att @ w.w_o


def cross_attention_layer(
    z: torch.Tensor, context: torch.Tensor, w: AttentionWeights
) -> torch.Tensor:
    """Attention(z w_q, context w_k, context w_v) w_o."""
    if context.shape[-1] != w.w_k.shape[0]:
        raise AttentionShapeError(
            f"context width {context.shape[-1]} does not match w_k input {w.w_k.shape[0]}"
        )
    att = scaled_dot_attention(
        z @ w.w_q, context @ w.w_k, context @ w.w_v, w.head_count
    )
    return att @ w.w_o


def init_adapter(base: AttentionWeights) -> AdapterLayerParams:
    """Clone the host key/value projections; zero the output projection.

    The zero output guarantees the extended layer initially reproduces the
    host layer exactly.
    """
    return AdapterLayerParams(
        w_k=base.w_k.detach().clone(),
        w_v=base.w_v.detach().clone(),
        w_o=torch.zeros_like(base.w_o),
    )


def bir_extended_attention(
    z_t: torch.Tensor,
    z_deg: torch.Tensor,
    base: AttentionWeights,
    adapter: AdapterLayerParams,
) -> torch.Tensor:
    """Host self-attention plus the adapter term.

    The adapter queries are the degraded features under the frozen base
    query projection; its keys and values project the diffused features
    through the fine-tuned weights.
    """
    if z_t.shape != z_deg.shape:
        raise AttentionShapeError(
            f"diffused/degraded feature shapes differ: {tuple(z_t.shape)} vs {tuple(z_deg.shape)}"
        )
    host = self_attention_layer(z_t, base)
    extra = scaled_dot_attention(
        z_deg @ base.w_q, z_t @ adapter.w_k, z_t @ adapter.w_v, base.head_count
    )
    return host + extra @ adapter.w_o


def variant1_attention(
    z_t: torch.Tensor, z_deg: torch.Tensor, base: AttentionWeights
) -> torch.Tensor:
    """Ablation: degraded features as query against the host key/value path."""
    if z_t.shape != z_deg.shape:
        raise AttentionShapeError("feature shapes differ")
    att = scaled_dot_attention(
        z_deg @ base.w_q, z_t @ base.w_k, z_t @ base.w_v, base.head_count
    )
    return att @ base.w_o


def variant2_attention(
    z_t: torch.Tensor, z_deg: torch.Tensor, base: AttentionWeights
) -> torch.Tensor:
    """Ablation: host output plus the degraded-query term, all base weights."""
    if z_t.shape != z_deg.shape:
        raise AttentionShapeError("feature shapes differ")
    return self_attention_layer(z_t, base) + variant1_attention(z_t, z_deg, base)
