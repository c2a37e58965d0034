"""The full network: per-modality encoders, cross-modal fusion and the shared projection space."""

from dataclasses import dataclass

import numpy as np

from daan_zsl.config.logging import get_logger
from daan_zsl.config.settings import Encoder, ExperimentConfig, ValueText
from daan_zsl.errors import ContractError, ShapeError
from daan_zsl.models.data import Modality
from daan_zsl.services.fusion import (
    TEXT,
    FusionHead,
    cross_attention,
    decode,
    project,
    reconstruct,
    text_hidden,
)
from daan_zsl.services.layers import ForwardContext, Mode, ParamStore
from daan_zsl.services.losses import PairEmbeddings
from daan_zsl.services.qdma import (
    MlpEncoder,
    QdmaAttention,
    mlp_width,
    qdma_forward,
    qdma_parameter_count,
)
from daan_zsl.services.tcn import TcnBypass, tcn_forward, temporal_embed_add
from daan_zsl.services.tensor import Tensor

logger = get_logger(__name__)

CONTEXT_TEXT = "context_text"


class QdmaEncoder:
    """Differential attention, refinement and the temporal bypass of one modality."""

    def __init__(self, store: ParamStore, modality: Modality, cfg: ExperimentConfig) -> None:
        d, q, t = cfg.dims, cfg.qdma, cfg.tcn
        self.attention = QdmaAttention(
            store,
            modality,
            input_dim=d.input,
            text_dim=d.output,
            hidden=d.hidden,
            tokens=q.tokens,
            attn_dim=q.attn_dim,
            groups=q.groups,
            dropout=q.dropout,
            beta=q.beta,
        )
        self.tcn = TcnBypass(store, modality, d.hidden, t.x_hid, t.n, t.k, t.kernel)

    def __call__(self, x: Tensor, w: Tensor, ctx: ForwardContext) -> Tensor:
        o3 = qdma_forward(x, w, self.attention, ctx)
        return temporal_embed_add(o3, tcn_forward(o3, self.tcn))


@dataclass
class Embeddings:
    """Outputs of one forward pass over ``N`` rows.

    ``phi`` holds the encoder features before cross-attention (and the mapped
    text); ``theta``, ``rho`` and ``phi_rec`` are keyed like
    :class:`~daan_zsl.services.losses.PairEmbeddings`.
    """

    theta: dict[str, Tensor]
    rho: dict[str, Tensor]
    phi: dict[str, Tensor]
    phi_rec: dict[str, Tensor]

    @property
    def rows(self) -> int:
        return self.theta[Modality.AUDIO].shape[0]


class DaanNetwork:
    """All learnable state of one model, registered in a single :class:`ParamStore`."""

    def __init__(self, cfg: ExperimentConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.store = ParamStore(rng)
        d = cfg.dims

        if cfg.model.encoder is Encoder.QDMA:
            self.encoders = {m: QdmaEncoder(self.store, m, cfg) for m in Modality}
        else:
            width = mlp_width(d.input, d.hidden, self.qdma_branch_size(cfg))
            self.encoders = {m: MlpEncoder(self.store, m, d.input, width, d.hidden) for m in Modality}
            logger.debug("Using MLP encoders", width=width)

        self.head = FusionHead(
            self.store,
            text_dim=d.output,
            hidden=d.hidden,
            output=d.output,
            tokens=cfg.qdma.tokens,
            attn_dim=cfg.fusion_attn_dim,
            ff_dim=cfg.fusion_ff_dim,
            heads=cfg.fusion.heads,
            dropout=cfg.fusion.dropout,
        )
        self.context_text = self.store.buffer(CONTEXT_TEXT, np.zeros((1, d.output)))

    @staticmethod
    def qdma_branch_size(cfg: ExperimentConfig) -> int:
        d, q, t = cfg.dims, cfg.qdma, cfg.tcn
        return qdma_parameter_count(
            d.input, d.output, d.hidden, q.tokens, q.attn_dim, t.x_hid, t.n, t.kernel
        )

    def set_context_text(self, seen_texts: np.ndarray) -> None:
        """Store the mean seen-class text as the value text shared by every sample."""

        if seen_texts.ndim != 2 or seen_texts.shape[1] != self.cfg.dims.output:
            raise ShapeError(f"seen texts {seen_texts.shape} do not have width {self.cfg.dims.output}")
        self.context_text[...] = seen_texts.mean(axis=0, keepdims=True)

    def value_text(self, texts: np.ndarray | None, ctx: ForwardContext) -> Tensor:
        if self.cfg.qdma.value_text is ValueText.CLASS and ctx.training:
            if texts is None:
                raise ContractError("class value text needs the samples' own texts in training")
            return Tensor(texts)
        return Tensor(self.context_text)

    def encode(self, modality: Modality, x: np.ndarray, w: Tensor, ctx: ForwardContext) -> Tensor:
        return self.encoders[modality](Tensor(x), w, ctx)

    def forward(
        self,
        audio: np.ndarray,
        visual: np.ndarray,
        texts: np.ndarray,
        ctx: ForwardContext,
    ) -> Embeddings:
        """Embed ``N`` audio/visual rows and their ``N`` class texts."""

        if not audio.shape == visual.shape or audio.shape[0] != texts.shape[0]:
            raise ShapeError(
                f"audio {audio.shape}, visual {visual.shape} and texts {texts.shape} are not row-aligned"
            )
        w = self.value_text(texts, ctx)
        phi_a = self.encode(Modality.AUDIO, audio, w, ctx)
        phi_v = self.encode(Modality.VISUAL, visual, w, ctx)
        phi_w = text_hidden(Tensor(texts), self.head)
        crs_a, crs_v = cross_attention(phi_a, phi_v, self.head)

        theta = {
            Modality.AUDIO: project(crs_a, Modality.AUDIO, self.head, ctx),
            Modality.VISUAL: project(crs_v, Modality.VISUAL, self.head, ctx),
            TEXT: project(phi_w, TEXT, self.head, ctx),
        }
        rho = {which: decode(t, which, self.head) for which, t in theta.items()}
        phi_rec = {m: reconstruct(theta[m], m, self.head) for m in Modality}
        phi = {Modality.AUDIO: phi_a, Modality.VISUAL: phi_v, TEXT: phi_w}
        return Embeddings(theta=theta, rho=rho, phi=phi, phi_rec=phi_rec)

    def embed_texts(self, texts: np.ndarray) -> np.ndarray:
        """Class texts projected into the shared space in evaluation mode."""

        ctx = ForwardContext(Mode.EVAL)
        theta = project(text_hidden(Tensor(texts), self.head), TEXT, self.head, ctx)
        return theta.data

    def embed_av(self, audio: np.ndarray, visual: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Audio and visual projections in evaluation mode; no class text is consulted."""

        ctx = ForwardContext(Mode.EVAL)
        w = Tensor(self.context_text)
        phi_a = self.encode(Modality.AUDIO, audio, w, ctx)
        phi_v = self.encode(Modality.VISUAL, visual, w, ctx)
        crs_a, crs_v = cross_attention(phi_a, phi_v, self.head)
        theta_a = project(crs_a, Modality.AUDIO, self.head, ctx)
        theta_v = project(crs_v, Modality.VISUAL, self.head, ctx)
        return theta_a.data, theta_v.data


def _rows(values: dict[str, Tensor], rows: slice) -> dict[str, Tensor]:
    return {k: v[rows] for k, v in values.items()}


def pair_embeddings(emb: Embeddings, batch: int, anchor_texts: np.ndarray) -> PairEmbeddings:
    """Split a stacked ``[anchors; negatives]`` forward into the loss inputs."""

    if emb.rows != 2 * batch:
        raise ContractError(f"expected {2 * batch} stacked rows, got {emb.rows}")
    pos, neg = slice(0, batch), slice(batch, 2 * batch)
    return PairEmbeddings(
        theta_pos=_rows(emb.theta, pos),
        theta_neg=_rows(emb.theta, neg),
        rho_pos=_rows(emb.rho, pos),
        rho_neg=_rows(emb.rho, neg),
        phi=_rows(emb.phi, pos),
        phi_rec=_rows(emb.phi_rec, pos),
        target=Tensor(anchor_texts),
    )
