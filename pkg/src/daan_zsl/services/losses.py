"""Triplet, composite and regularization losses, evaluated per anchor/negative pair.

Every function works row-wise on ``(B, dim)`` tensors and returns ``(B,)``
per-pair values, so the per-pair total can be differentiated one pair at a
time (see ``Tape.per_seed_gradients``).
"""

from dataclasses import dataclass
from functools import cached_property

from daan_zsl.config.settings import RecDistance, TrainConfig
from daan_zsl.errors import ContractError
from daan_zsl.models.reports import LossBreakdown
from daan_zsl.services.tensor import Tensor, relu, row_norm

A, V, W = "audio", "visual", "text"


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    rec_distance: RecDistance = RecDistance.MEAN_SQUARED

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ContractError(f"margin must be nonnegative, got {self.margin}")

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "LossConfig":
        return cls(margin=cfg.margin, rec_distance=cfg.rec_distance)


@dataclass
class PairEmbeddings:
    """Network outputs for B anchors (``pos``) and their mined negatives (``neg``).

    ``theta_*`` and ``rho_*`` map ``audio``/``visual``/``text`` to ``(B, dim)``
    tensors; ``phi`` holds the anchors' hidden features for ``audio``,
    ``visual`` and ``text``; ``phi_rec`` the reconstructed audio and visual
    hidden features; ``target`` the anchors' class text embeddings.
    """

    theta_pos: dict[str, Tensor]
    theta_neg: dict[str, Tensor]
    rho_pos: dict[str, Tensor]
    rho_neg: dict[str, Tensor]
    phi: dict[str, Tensor]
    phi_rec: dict[str, Tensor]
    target: Tensor


@dataclass
class LossTerms:
    L_t: Tensor
    l_rec: Tensor
    l_ct: Tensor
    l_w: Tensor
    L_r: Tensor

    @cached_property
    def per_pair(self) -> Tensor:
        return self.L_t + (self.l_rec + self.l_ct + self.l_w) + self.L_r

    def breakdown(self) -> LossBreakdown:
        values = {name: float(getattr(self, name).data.mean()) for name in ("L_t", "l_rec", "l_ct", "l_w", "L_r")}
        return LossBreakdown(total=float(self.per_pair.data.mean()), **values)


def distance(x: Tensor, y: Tensor) -> Tensor:
    """Row-wise Euclidean distance."""

    return row_norm(x - y)


def mean_squared(x: Tensor, y: Tensor) -> Tensor:
    diff = x - y
    return (diff * diff).mean(axis=-1)


def triplet(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float) -> Tensor:
    """``max(0, d(anchor, positive) - d(anchor, negative) + margin)``."""

    return relu(distance(anchor, positive) - distance(anchor, negative) + margin)


def _check_shapes(emb: PairEmbeddings) -> None:
    groups = {
        "theta": [*emb.theta_pos.values(), *emb.theta_neg.values()],
        "rho": [*emb.rho_pos.values(), *emb.rho_neg.values(), emb.target],
        "phi": [*emb.phi.values(), *emb.phi_rec.values()],
    }
    for name, tensors in groups.items():
        shapes = {t.shape for t in tensors}
        if len(shapes) != 1:
            raise ContractError(f"{name} embeddings disagree in shape: {sorted(shapes)}")


def loss_terms(emb: PairEmbeddings, cfg: LossConfig) -> LossTerms:
    _check_shapes(emb)
    tp, tn, rp, rn = emb.theta_pos, emb.theta_neg, emb.rho_pos, emb.rho_neg
    m = cfg.margin
    rec = distance if cfg.rec_distance == RecDistance.EUCLIDEAN else mean_squared

    L_t = (
        triplet(tp[A], tp[W], tn[A], m)
        + triplet(tp[V], tp[W], tn[V], m)
        + triplet(tp[W], tp[A], tn[W], m)
        + triplet(tp[W], tp[V], tn[W], m)
    )
    l_rec = rec(rp[A], emb.target) + rec(rp[V], emb.target) + rec(rp[W], emb.target)
    l_ct = triplet(rp[W], rp[A], rn[A], m) + triplet(rp[W], rp[V], rn[V], m)
    l_w = (
        triplet(tp[W], tp[A], tn[A], m)
        + triplet(tp[W], tp[V], tn[V], m)
        + triplet(tp[A], tp[W], tn[W], m)
        + triplet(tp[V], tp[W], tn[W], m)
    )
    L_r = (
        distance(emb.phi_rec[A], emb.phi[A])
        + distance(emb.phi_rec[V], emb.phi[V])
        + distance(emb.phi[A], emb.phi[W])
        + distance(emb.phi[V], emb.phi[W])
    )
    return LossTerms(L_t=L_t, l_rec=l_rec, l_ct=l_ct, l_w=l_w, L_r=L_r)


def loss_total(emb: PairEmbeddings, cfg: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """Per-pair total loss ``(B,)`` and the batch-mean breakdown."""

    terms = loss_terms(emb, cfg)
    return terms.per_pair, terms.breakdown()
