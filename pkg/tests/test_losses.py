import numpy as np
import pytest

from daan_zsl.config.settings import RecDistance
from daan_zsl.errors import ContractError
from daan_zsl.services.losses import LossConfig, PairEmbeddings, loss_terms, loss_total, triplet
from daan_zsl.services.tensor import Tensor
from tests.oracles import recompute_losses

_TRIPLE = ("audio", "visual", "text")


def _raw(rng, batch, out_dim, text_dim, hidden) -> dict:
    def group(keys, dim):
        return {k: rng.normal(size=(batch, dim)) for k in keys}

    return {
        "theta_pos": group(_TRIPLE, out_dim),
        "theta_neg": group(_TRIPLE, out_dim),
        "rho_pos": group(_TRIPLE, text_dim),
        "rho_neg": group(_TRIPLE, text_dim),
        "phi": group(_TRIPLE, hidden),
        "phi_rec": group(("audio", "visual"), hidden),
        "target": rng.normal(size=(batch, text_dim)),
    }


def _embeddings(raw: dict) -> PairEmbeddings:
    def wrap(group):
        return {k: Tensor(v) for k, v in group.items()}

    return PairEmbeddings(
        theta_pos=wrap(raw["theta_pos"]),
        theta_neg=wrap(raw["theta_neg"]),
        rho_pos=wrap(raw["rho_pos"]),
        rho_neg=wrap(raw["rho_neg"]),
        phi=wrap(raw["phi"]),
        phi_rec=wrap(raw["phi_rec"]),
        target=Tensor(raw["target"]),
    )


def test_loss_terms_match_scalar_recomputation(rng):
    """Batch-mean terms agree with a pair-by-pair scalar evaluation on random instances."""

    for i in range(1000):
        batch = int(rng.integers(1, 5))
        dims = rng.integers(2, 6, size=3)
        margin = float(rng.uniform(0.0, 3.0))
        rec = RecDistance.EUCLIDEAN if i % 2 else RecDistance.MEAN_SQUARED
        raw = _raw(rng, batch, *map(int, dims))

        _, breakdown = loss_total(_embeddings(raw), LossConfig(margin=margin, rec_distance=rec))
        expected = recompute_losses(raw, margin, rec="euclidean" if i % 2 else "mean-squared")
        for name, value in expected.items():
            assert getattr(breakdown, name) == pytest.approx(value, rel=1e-10, abs=1e-10), name


def test_per_pair_total_sums_all_terms(rng):
    raw = _raw(rng, 3, 4, 3, 5)
    terms = loss_terms(_embeddings(raw), LossConfig())
    expected = terms.L_t.data + terms.l_rec.data + terms.l_ct.data + terms.l_w.data + terms.L_r.data
    assert terms.per_pair.shape == (3,)
    np.testing.assert_allclose(terms.per_pair.data, expected, rtol=1e-14)


def test_collapsed_positives_and_distant_negatives_give_zero_loss(rng):
    batch, dim = 2, 3
    anchor = rng.normal(size=(batch, dim))
    far = anchor + 10.0
    target = rng.normal(size=(batch, dim))
    hidden = rng.normal(size=(batch, 4))
    raw = {
        "theta_pos": {k: anchor for k in _TRIPLE},
        "theta_neg": {k: far for k in _TRIPLE},
        "rho_pos": {k: target for k in _TRIPLE},
        "rho_neg": {k: target + 10.0 for k in _TRIPLE},
        "phi": {k: hidden for k in _TRIPLE},
        "phi_rec": {k: hidden for k in ("audio", "visual")},
        "target": target,
    }
    per_pair, breakdown = loss_total(_embeddings(raw), LossConfig(margin=1.0))
    assert np.all(per_pair.data == 0.0)
    assert breakdown.total == 0.0


def test_triplet_hinge():
    a = Tensor(np.zeros((1, 2)))
    p = Tensor(np.array([[3.0, 0.0]]))
    n = Tensor(np.array([[0.0, 1.0]]))
    assert triplet(a, p, n, 0.5).data.tolist() == [2.5]
    assert triplet(a, n, p, 0.5).data.tolist() == [0.0]


def test_shape_disagreement_is_a_contract_error(rng):
    raw = _raw(rng, 2, 4, 3, 5)
    raw["theta_neg"]["visual"] = rng.normal(size=(3, 4))
    with pytest.raises(ContractError, match="theta"):
        loss_terms(_embeddings(raw), LossConfig())


def test_negative_margin_is_rejected():
    with pytest.raises(ContractError):
        LossConfig(margin=-0.1)
