"""Split-path differential attention and its refinement layer.

A modality feature of width ``input`` is folded into ``T`` tokens; each token
is split column-wise into halves ``h1`` and ``h2`` which produce two
independent score maps. Their weighted difference attends over values derived
from the text embedding folded to the same ``T`` tokens::

    o1 = (softmax(Q1 K1^T / sqrt(d)) - beta * softmax(Q2 K2^T / sqrt(d))) @ V
    o3 = (1 - beta) * dropout(relu(bn(W_r @ group_norm(o1))))
"""

import math

from daan_zsl.errors import ShapeError
from daan_zsl.models.data import Modality, Part
from daan_zsl.services.layers import (
    BatchNorm,
    Dropout,
    ForwardContext,
    GroupNorm,
    Linear,
    ParamStore,
)
from daan_zsl.services.tensor import Tensor, relu, softmax_rows


def fold_tokens(x: Tensor, tokens: int) -> Tensor:
    """``(..., d) -> (..., T, d / T)``; row ``t`` holds ``x[t*k:(t+1)*k]``."""

    d = x.shape[-1]
    if tokens < 1 or d % tokens:
        raise ShapeError(f"cannot fold width {d} into {tokens} tokens")
    return x.reshape(x.shape[:-1] + (tokens, d // tokens))


def unfold_tokens(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"unfold needs a (..., T, k) tensor, got {x.shape}")
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


class QdmaAttention:
    """Parameters of one modality's differential attention and refinement."""

    def __init__(
        self,
        store: ParamStore,
        modality: Modality,
        input_dim: int,
        text_dim: int,
        hidden: int,
        tokens: int,
        attn_dim: int,
        groups: int,
        dropout: float,
        beta: float,
    ) -> None:
        token_dim = input_dim // tokens
        if token_dim % 2:
            raise ShapeError(f"token width {token_dim} cannot be split into two halves")
        half = token_dim // 2
        prefix = f"{modality}.{Part.ATTN}"
        tag = {"part": Part.ATTN, "modality": modality}

        self.tokens = tokens
        self.attn_dim = attn_dim
        self.hidden = hidden
        self.beta = beta
        self.w_q1 = store.add(f"{prefix}.w_q1", (half, attn_dim), **tag)
        self.w_k1 = store.add(f"{prefix}.w_k1", (half, attn_dim), **tag)
        self.w_q2 = store.add(f"{prefix}.w_q2", (half, attn_dim), **tag)
        self.w_k2 = store.add(f"{prefix}.w_k2", (half, attn_dim), **tag)
        self.w_v = store.add(f"{prefix}.w_v", (text_dim // tokens, hidden // tokens), **tag)
        self.group_norm = GroupNorm(store, f"{prefix}.gn", hidden, groups, **tag)
        self.refine = Linear(store, f"{prefix}.refine", hidden, hidden, bias=False, **tag)
        self.refine_norm = BatchNorm(store, f"{prefix}.refine_bn", hidden, **tag)
        self.dropout = Dropout(dropout)


def differential_scores(m_tokens: Tensor, params: QdmaAttention, beta: float) -> Tensor:
    """``S1 - beta * S2`` for ``(..., T, d_tok)`` tokens; rows sum to ``1 - beta``."""

    d_tok = m_tokens.shape[-1]
    if d_tok % 2:
        raise ShapeError(f"token width {d_tok} is odd; the two paths need equal halves")
    half = d_tok // 2
    h1 = m_tokens[..., :half]
    h2 = m_tokens[..., half:]
    scale = 1.0 / math.sqrt(params.attn_dim)

    s1 = softmax_rows((h1 @ params.w_q1) @ (h1 @ params.w_k1).swapaxes(-1, -2) * scale)
    s2 = softmax_rows((h2 @ params.w_q2) @ (h2 @ params.w_k2).swapaxes(-1, -2) * scale)
    return s1 - beta * s2


def differential_attention(
    m_tokens: Tensor, w_tokens: Tensor, params: QdmaAttention, beta: float
) -> Tensor:
    if w_tokens.shape[-2] != m_tokens.shape[-2]:
        raise ShapeError(
            f"text tokens {w_tokens.shape} do not match modality tokens {m_tokens.shape}"
        )
    return differential_scores(m_tokens, params, beta) @ (w_tokens @ params.w_v)


def refinement(o1: Tensor, params: QdmaAttention, beta: float, ctx: ForwardContext) -> Tensor:
    """Group norm, linear map, batch norm, ReLU and dropout, scaled by ``1 - beta``."""

    flat = unfold_tokens(o1)
    o2 = params.group_norm(flat)
    refined = params.dropout(relu(params.refine_norm(params.refine(o2), ctx)), ctx)
    return refined * (1.0 - beta)


def qdma_forward(x: Tensor, w: Tensor, params: QdmaAttention, ctx: ForwardContext) -> Tensor:
    """Modality features ``(N, input)`` and value text ``(N | 1, text_dim)`` to ``(N, hidden)``."""

    m_tokens = fold_tokens(x, params.tokens)
    w_tokens = fold_tokens(w, params.tokens)
    o1 = differential_attention(m_tokens, w_tokens, params, params.beta)
    return refinement(o1, params, params.beta, ctx)


class MlpEncoder:
    """Two-layer MLP standing in for the attention unit in the ablation base model."""

    def __init__(self, store: ParamStore, modality: Modality, input_dim: int, width: int, hidden: int) -> None:
        self.first = Linear(store, f"{modality}.mlp.first", input_dim, width)
        self.second = Linear(store, f"{modality}.mlp.second", width, hidden)

    def __call__(self, x: Tensor, w: Tensor, ctx: ForwardContext) -> Tensor:
        return mlp_encoder_forward(x, self)


def mlp_encoder_forward(x: Tensor, encoder: MlpEncoder) -> Tensor:
    return encoder.second(relu(encoder.first(x)))


def qdma_parameter_count(
    input_dim: int,
    text_dim: int,
    hidden: int,
    tokens: int,
    attn_dim: int,
    x_hid: int,
    n_dilated: int,
    kernel: int,
) -> int:
    """Learnable entries of one modality's attention, refinement and TCN."""

    half = input_dim // tokens // 2
    attention = 4 * half * attn_dim + (text_dim // tokens) * (hidden // tokens)
    refinement_count = 2 * hidden + hidden * hidden + 2 * hidden
    channels = hidden // x_hid
    tcn = (1 + n_dilated) * channels * channels * kernel
    return attention + refinement_count + tcn


def mlp_width(input_dim: int, hidden: int, target_count: int) -> int:
    """Hidden width giving an ``input -> width -> hidden`` MLP about ``target_count`` entries."""

    return max(1, round((target_count - hidden) / (input_dim + hidden + 1)))
