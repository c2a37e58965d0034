import numpy as np
import pytest

from daan_zsl.errors import ShapeError
from daan_zsl.models.data import Modality, Part
from daan_zsl.services.layers import ParamStore
from daan_zsl.services.tcn import TcnBypass, tcn_forward, temporal_embed_add
from daan_zsl.services.tensor import Tensor
from tests.oracles import nested_loop_conv


def _bypass(rng, n=2, k=2, kernel=2, hidden=12, x_hid=4) -> TcnBypass:
    return TcnBypass(ParamStore(rng), Modality.AUDIO, hidden, x_hid, n, k, kernel)


def _reference(o3: np.ndarray, bypass: TcnBypass) -> np.ndarray:
    out = []
    for row in o3:
        folded = row.reshape(bypass.x_hid, -1)
        h = nested_loop_conv(folded.T, bypass.w_c.data, 1)
        for w in bypass.w_d:
            h = nested_loop_conv(h, w.data, bypass.dilation)
        out.append(h.T + folded)
    return np.stack(out)


@pytest.mark.parametrize("n,k,kernel", [(0, 1, 1), (1, 2, 2), (3, 2, 3)])
def test_forward_matches_loop_reference(rng, n, k, kernel):
    bypass = _bypass(rng, n=n, k=k, kernel=kernel)
    o3 = rng.normal(size=(3, 12))
    y = tcn_forward(Tensor(o3), bypass).data
    assert y.shape == (3, 4, 3)
    np.testing.assert_allclose(y, _reference(o3, bypass), atol=1e-10)


def test_first_step_only_sees_itself(rng):
    bypass = _bypass(rng)
    o3 = rng.normal(size=(1, 12))
    before = tcn_forward(Tensor(o3), bypass).data
    o3[0, 3:] += 1.0
    after = tcn_forward(Tensor(o3), bypass).data
    np.testing.assert_array_equal(before[0, 0], after[0, 0])


def test_temporal_embed_adds_last_step_everywhere(rng):
    o3 = rng.normal(size=(2, 12))
    y = rng.normal(size=(2, 4, 3))
    out = temporal_embed_add(Tensor(o3), Tensor(y)).data
    expected = (o3.reshape(2, 4, 3) + y[:, -1:, :]).reshape(2, 12)
    np.testing.assert_allclose(out, expected)


def test_temporal_embed_rejects_mismatched_shapes(rng):
    with pytest.raises(ShapeError):
        temporal_embed_add(Tensor(rng.normal(size=(2, 12))), Tensor(rng.normal(size=(2, 4, 2))))


def test_hidden_must_fold_into_steps(rng):
    with pytest.raises(ShapeError):
        _bypass(rng, hidden=10, x_hid=4)


def test_weights_are_tagged_as_temporal_part(rng):
    store = ParamStore(rng)
    TcnBypass(store, Modality.VISUAL, 12, 4, 2, 2, 2)
    assert set(store.groups()) == {(Modality.VISUAL, Part.TCN)}
    assert store.parameter_count() == 3 * 3 * 3 * 2


def test_zero_kernels_leave_the_residual(rng):
    bypass = _bypass(rng)
    bypass.w_c.data[...] = 0.0
    for w in bypass.w_d:
        w.data[...] = 0.0
    o3 = rng.normal(size=(2, 12))
    np.testing.assert_array_equal(tcn_forward(Tensor(o3), bypass).data, o3.reshape(2, 4, 3))
