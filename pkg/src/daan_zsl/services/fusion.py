"""Cross-modal attention, projections into the shared space, decoders and reconstructors."""

import math

from daan_zsl.errors import ShapeError
from daan_zsl.models.data import Modality
from daan_zsl.services.layers import ForwardContext, LayerNorm, Linear, ParamStore, ProjectionBlock
from daan_zsl.services.qdma import fold_tokens, unfold_tokens
from daan_zsl.services.tensor import Tensor, relu, softmax_rows

TEXT = "text"


class CrossAttentionBranch:
    """Queries from one modality against keys and values of the other."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        token_dim: int,
        attn_dim: int,
        ff_dim: int,
        heads: int,
    ) -> None:
        if attn_dim % heads:
            raise ShapeError(f"{heads} heads do not divide attention width {attn_dim}")
        self.heads = heads
        self.head_dim = attn_dim // heads
        self.w_q = store.add(f"{name}.w_q", (token_dim, attn_dim))
        self.w_k = store.add(f"{name}.w_k", (token_dim, attn_dim))
        self.w_v = store.add(f"{name}.w_v", (token_dim, attn_dim))
        self.w_o = store.add(f"{name}.w_o", (attn_dim, token_dim), fan_in=attn_dim)
        self.ff_in = Linear(store, f"{name}.ff_in", token_dim, ff_dim)
        self.ff_out = Linear(store, f"{name}.ff_out", ff_dim, token_dim)
        self.norm = LayerNorm(store, f"{name}.ln", token_dim)

    def _split_heads(self, x: Tensor) -> Tensor:
        if self.heads == 1:
            return x
        split = x.reshape(x.shape[:-1] + (self.heads, self.head_dim))
        return split.swapaxes(-3, -2)

    def _merge_heads(self, x: Tensor) -> Tensor:
        if self.heads == 1:
            return x
        merged = x.swapaxes(-3, -2)
        return merged.reshape(merged.shape[:-2] + (self.heads * self.head_dim,))

    def __call__(self, query_tokens: Tensor, context_tokens: Tensor) -> Tensor:
        q = self._split_heads(query_tokens @ self.w_q)
        k = self._split_heads(context_tokens @ self.w_k)
        v = self._split_heads(context_tokens @ self.w_v)
        scores = softmax_rows(q @ k.swapaxes(-1, -2) * (1.0 / math.sqrt(self.head_dim)))
        attended = self._merge_heads(scores @ v) @ self.w_o
        fed = self.ff_out(relu(self.ff_in(attended)))
        return self.norm(query_tokens + fed)


class FusionHead:
    """Everything between the per-modality encoders and the losses."""

    def __init__(
        self,
        store: ParamStore,
        text_dim: int,
        hidden: int,
        output: int,
        tokens: int,
        attn_dim: int,
        ff_dim: int,
        heads: int,
        dropout: float,
    ) -> None:
        self.tokens = tokens
        token_dim = hidden // tokens
        self.cross = {
            m: CrossAttentionBranch(store, f"fusion.cross_{m}", token_dim, attn_dim, ff_dim, heads)
            for m in Modality
        }
        self.text_map = Linear(store, "fusion.text_map", text_dim, hidden)
        self.projections = {
            which: ProjectionBlock(store, f"fusion.project_{which}", hidden, output, dropout)
            for which in (Modality.AUDIO, Modality.VISUAL, TEXT)
        }
        self.decoders = {
            which: Linear(store, f"fusion.decode_{which}", output, text_dim)
            for which in (Modality.AUDIO, Modality.VISUAL, TEXT)
        }
        self.reconstructors = {
            m: Linear(store, f"fusion.reconstruct_{m}", output, hidden) for m in Modality
        }


def cross_attention(phi_a: Tensor, phi_v: Tensor, head: FusionHead) -> tuple[Tensor, Tensor]:
    """``(N, hidden)`` audio and visual features exchanged through attention."""

    if phi_a.shape != phi_v.shape:
        raise ShapeError(f"audio {phi_a.shape} and visual {phi_v.shape} features differ in shape")
    a_tok = fold_tokens(phi_a, head.tokens)
    v_tok = fold_tokens(phi_v, head.tokens)
    a_crs = head.cross[Modality.AUDIO](a_tok, v_tok)
    v_crs = head.cross[Modality.VISUAL](v_tok, a_tok)
    return unfold_tokens(a_crs), unfold_tokens(v_crs)


def text_hidden(w: Tensor, head: FusionHead) -> Tensor:
    return head.text_map(w)


def project(phi: Tensor, which: str, head: FusionHead, ctx: ForwardContext) -> Tensor:
    return head.projections[which](phi, ctx)


def decode(theta: Tensor, which: str, head: FusionHead) -> Tensor:
    return head.decoders[which](theta)


def reconstruct(theta: Tensor, which: Modality, head: FusionHead) -> Tensor:
    return head.reconstructors[which](theta)
