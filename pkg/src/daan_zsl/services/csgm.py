"""Sample-level gradient modulation of the per-modality encoder parts.

For every anchor/negative pair the convergence rate ``V_c`` of each modality
(how far its positive and negative embeddings are from settling) is combined
with the optimization rate ``V_o`` of each encoder part (squared gradient norm
over squared parameter norm) into a contribution rate::

    eta = max(V_c * V_o / (1 + V_o), gamma)

Each pair's encoder-part gradients are scaled by its own ``eta`` before the
batch gradients are averaged and handed to the optimizer; the modulated parts
then receive Gaussian noise proportional to their gradient RMS.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from daan_zsl.config.settings import CsgmConfig, DeltaIndexing
from daan_zsl.errors import ContractError, DegenerateParameterError, ShapeError
from daan_zsl.models.data import Modality
from daan_zsl.models.reports import ContributionRate
from daan_zsl.services.fusion import TEXT
from daan_zsl.services.layers import ParamStore
from daan_zsl.services.optimizers import Optimizer

GroupKey = tuple[str, str]
TRACE_COLUMNS = ["step", "sample_id", "modality", "part", "v_c", "v_o", "eta"]
_BELOW_ONE = np.nextafter(1.0, 0.0)


def delta(theta_m: np.ndarray, theta_e: np.ndarray, theta_n: np.ndarray, mu: float) -> np.ndarray:
    """Normalized hinge gap ``1 - exp(-mu * max(d(m, e) - d(m, n), 0))`` per row, in ``[0, 1)``."""

    if not theta_m.shape == theta_e.shape == theta_n.shape:
        raise ShapeError(f"delta operands differ: {theta_m.shape}, {theta_e.shape}, {theta_n.shape}")
    gap = np.linalg.norm(theta_m - theta_e, axis=-1) - np.linalg.norm(theta_m - theta_n, axis=-1)
    raw = np.maximum(gap, 0.0)
    return np.minimum(-np.expm1(-mu * raw), _BELOW_ONE)


def convergence_rate(
    pos: dict[str, np.ndarray],
    neg: dict[str, np.ndarray],
    mu: float,
    indexing: DeltaIndexing = DeltaIndexing.TRIPLET,
) -> dict[Modality, np.ndarray]:
    """Per-pair ``V_c`` for audio and visual from the six projected embeddings.

    ``triplet`` indexing multiplies the gaps of the modality-anchored,
    text-anchored and cross-text triplets; ``literal`` keeps the repeated
    negative indices, whose middle factor is always zero.
    """

    for which in (Modality.AUDIO, Modality.VISUAL, TEXT):
        if which not in pos or which not in neg:
            raise ContractError(f"convergence rate needs positive and negative {which} embeddings")
    w_pos, w_neg = pos[TEXT], neg[TEXT]
    rates = {}
    for m in Modality:
        m_pos, m_neg = pos[m], neg[m]
        if indexing is DeltaIndexing.TRIPLET:
            factors = (
                delta(m_pos, w_pos, m_neg, mu),
                delta(w_pos, m_pos, m_neg, mu),
                delta(m_pos, w_pos, w_neg, mu),
            )
        else:
            factors = (
                delta(m_pos, w_pos, m_neg, mu),
                delta(w_pos, m_neg, m_neg, mu),
                delta(m_pos, w_neg, w_neg, mu),
            )
        rates[m] = factors[0] * factors[1] * factors[2]
    return rates


def optimization_rate(grads: list[np.ndarray], params: list[np.ndarray]) -> np.ndarray:
    """Raw ``||G||^2 / ||Theta||^2`` over a part's tensors, one value per leading sample row."""

    if len(grads) != len(params):
        raise ContractError(f"{len(grads)} gradient tensors for {len(params)} parameters")
    theta_sq = sum(float(np.sum(p * p)) for p in params)
    if theta_sq == 0.0:
        raise DegenerateParameterError("part parameters have zero norm")
    grad_sq = sum(np.sum(g * g, axis=tuple(range(1, g.ndim))) for g in grads)
    return grad_sq / theta_sq


def normalized_rate(v_o: np.ndarray) -> np.ndarray:
    return v_o / (1.0 + v_o)


def contribution_rate(v_c, v_o_hat, gamma: float):
    return np.maximum(np.multiply(v_c, v_o_hat), gamma)


@dataclass
class ModulationRates:
    """Per-pair rates for every registered ``(modality, part)`` group."""

    v_c: dict[GroupKey, np.ndarray] = field(default_factory=dict)
    v_o: dict[GroupKey, np.ndarray] = field(default_factory=dict)
    eta: dict[GroupKey, np.ndarray] = field(default_factory=dict)

    def for_sample(self, index: int) -> list[ContributionRate]:
        return [
            ContributionRate(
                modality=m,
                part=p,
                eta=float(self.eta[(m, p)][index]),
                v_c=float(self.v_c[(m, p)][index]),
                v_o=float(self.v_o[(m, p)][index]),
            )
            for m, p in sorted(self.eta)
        ]

    def mean_eta(self) -> dict[str, float]:
        return {f"{m}.{p}": float(np.mean(eta)) for (m, p), eta in sorted(self.eta.items())}

    def trace(self, step: int, sample_ids: np.ndarray) -> pd.DataFrame:
        frames = [
            pd.DataFrame(
                {
                    "step": step,
                    "sample_id": sample_ids,
                    "modality": str(m),
                    "part": str(p),
                    "v_c": self.v_c[(m, p)],
                    "v_o": self.v_o[(m, p)],
                    "eta": self.eta[(m, p)],
                }
            )
            for m, p in sorted(self.eta)
        ]
        if not frames:
            return pd.DataFrame(columns=TRACE_COLUMNS)
        return pd.concat(frames, ignore_index=True)[TRACE_COLUMNS]


def compute_rates(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    pos: dict[str, np.ndarray],
    neg: dict[str, np.ndarray],
    cfg: CsgmConfig,
) -> ModulationRates:
    """Rates for every tagged group of ``store`` from per-pair gradients ``(B, *shape)``."""

    v_c = convergence_rate(pos, neg, cfg.mu, cfg.delta_indexing)
    rates = ModulationRates()
    for (modality, part), params in store.groups().items():
        key = (modality, part)
        vc = v_c[Modality(modality)]
        if cfg.vc_only:
            vo_hat = np.ones_like(vc)
        else:
            raw = optimization_rate([grads[p.name] for p in params], [p.data for p in params])
            vo_hat = normalized_rate(raw)
        eta = contribution_rate(vc, vo_hat, cfg.gamma)
        if np.any(eta < cfg.gamma):
            raise ContractError(f"contribution rate fell below gamma for {modality}.{part}")
        rates.v_c[key], rates.v_o[key], rates.eta[key] = vc, vo_hat, eta
    return rates


def unit_rates(store: ParamStore, batch: int) -> ModulationRates:
    """``eta = 1`` for every group: the unmodulated step through the same code path."""

    ones = np.ones(batch)
    rates = ModulationRates()
    for key in store.groups():
        rates.v_c[key], rates.v_o[key], rates.eta[key] = ones, ones, ones
    return rates


def accumulate(
    store: ParamStore, grads: dict[str, np.ndarray], rates: ModulationRates
) -> dict[str, np.ndarray]:
    """Batch-mean gradient with each pair's part gradients scaled by that pair's ``eta``."""

    out = {}
    for name, param in store.params.items():
        g = grads[name]
        if param.part is not None and param.modality is not None:
            key = (param.modality, param.part)
            if key not in rates.eta:
                raise ContractError(f"no contribution rate for registered part {param.modality}.{param.part}")
            eta = rates.eta[key].reshape((-1,) + (1,) * param.ndim)
            g = eta * g
        out[name] = g.sum(axis=0) / g.shape[0]
    return out


def modulated_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    rates: ModulationRates,
    optimizer: Optimizer,
    cfg: CsgmConfig,
    rng: np.random.Generator,
    noisy: bool,
) -> dict[str, np.ndarray]:
    """Accumulate, take one optimizer step, then perturb the modulated parts.

    Noise per tensor has standard deviation ``noise_scale * RMS(gradient)`` and
    is drawn only when ``noisy`` is set and ``noise_scale > 0``.
    """

    accumulated = accumulate(store, grads, rates)
    optimizer.step(store.params, accumulated)
    if noisy and cfg.noise_scale > 0:
        for name, param in store.params.items():
            if param.part is None:
                continue
            g = accumulated[name]
            std = cfg.noise_scale * float(np.sqrt(np.mean(g * g)))
            param.data += rng.normal(0.0, 1.0, size=param.shape) * std
    return accumulated
