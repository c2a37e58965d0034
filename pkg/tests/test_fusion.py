import numpy as np
import pytest

from daan_zsl.errors import ShapeError
from daan_zsl.models.data import Modality
from daan_zsl.services.fusion import (
    TEXT,
    CrossAttentionBranch,
    FusionHead,
    cross_attention,
    decode,
    project,
    reconstruct,
    text_hidden,
)
from daan_zsl.services.layers import ForwardContext, Mode, ParamStore
from daan_zsl.services.tensor import Tensor


def _head(rng, heads=1) -> FusionHead:
    return FusionHead(
        ParamStore(rng), text_dim=6, hidden=8, output=5, tokens=2, attn_dim=4, ff_dim=6, heads=heads, dropout=0.0
    )


@pytest.mark.parametrize("heads", [1, 2])
def test_cross_attention_keeps_shapes_and_normalizes_tokens(rng, heads):
    head = _head(rng, heads)
    a_crs, v_crs = cross_attention(Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(3, 8))), head)
    assert a_crs.shape == v_crs.shape == (3, 8)
    np.testing.assert_allclose(a_crs.data.reshape(3, 2, 4).mean(axis=-1), 0.0, atol=1e-12)


def test_audio_branch_reads_visual_context(rng):
    head = _head(rng)
    phi_a = rng.normal(size=(2, 8))
    phi_v = rng.normal(size=(2, 8))
    a1, _ = cross_attention(Tensor(phi_a), Tensor(phi_v), head)
    a2, _ = cross_attention(Tensor(phi_a), Tensor(phi_v * 2.0 + 1.0), head)
    assert not np.allclose(a1.data, a2.data)


def test_mismatched_inputs_are_rejected(rng):
    with pytest.raises(ShapeError):
        cross_attention(Tensor(np.ones((2, 8))), Tensor(np.ones((3, 8))), _head(rng))


def test_heads_must_divide_attention_width(rng):
    with pytest.raises(ShapeError):
        CrossAttentionBranch(ParamStore(rng), "x", 4, 6, 4, heads=4)


def test_projection_decoding_and_reconstruction_shapes(rng):
    head = _head(rng)
    ctx = ForwardContext(Mode.TRAIN, rng)
    phi_w = text_hidden(Tensor(rng.normal(size=(4, 6))), head)
    assert phi_w.shape == (4, 8)
    theta = project(phi_w, TEXT, head, ctx)
    assert theta.shape == (4, 5)
    assert decode(theta, TEXT, head).shape == (4, 6)
    assert reconstruct(theta, Modality.AUDIO, head).shape == (4, 8)


def test_zero_output_maps_reduce_to_layer_norm(rng):
    branch = CrossAttentionBranch(ParamStore(rng), "x", 4, 4, 6, heads=1)
    branch.w_o.data[...] = 0.0
    branch.ff_out.weight.data[...] = 0.0
    branch.ff_out.bias.data[...] = 0.0
    query = rng.normal(size=(3, 2, 4))
    out = branch(Tensor(query), Tensor(rng.normal(size=(3, 2, 4)))).data
    np.testing.assert_array_equal(out, branch.norm(Tensor(query)).data)


def test_identical_inputs_and_weights_give_identical_branches(rng):
    head = _head(rng)
    audio, visual = head.cross[Modality.AUDIO], head.cross[Modality.VISUAL]
    for name in ("w_q", "w_k", "w_v", "w_o"):
        getattr(visual, name).data[...] = getattr(audio, name).data
    for layer in ("ff_in", "ff_out"):
        getattr(visual, layer).weight.data[...] = getattr(audio, layer).weight.data
        getattr(visual, layer).bias.data[...] = getattr(audio, layer).bias.data
    phi = rng.normal(size=(2, 8))
    a_crs, v_crs = cross_attention(Tensor(phi), Tensor(phi.copy()), head)
    np.testing.assert_array_equal(a_crs.data, v_crs.data)
