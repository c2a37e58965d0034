"""Temporal bypass over the refined hidden feature.

The hidden vector is folded into ``x_hid`` time steps of ``y_hid`` channels,
passed through one causal convolution and ``n`` dilated causal convolutions,
and added back to its input. The embedding of the last time step is then
added to every step of the folded feature.
"""

from daan_zsl.errors import ShapeError
from daan_zsl.models.data import Modality, Part
from daan_zsl.services.layers import ParamStore
from daan_zsl.services.qdma import fold_tokens, unfold_tokens
from daan_zsl.services.tensor import Tensor, conv1d_causal


class TcnBypass:
    """Causal temporal-convolution weights of one modality's encoder.

    The hidden vector is folded into ``x_hid`` time steps of ``hidden // x_hid``
    channels. One causal convolution is followed by ``n`` convolutions with
    dilation ``k``, all with the same kernel size. Every weight is tagged
    ``(modality, qdma.tcn)`` so modulation can scale it.

    Args:
        store: Registry the weights are added to
        modality: Encoder branch the weights belong to
        hidden: Width of the vector being folded
        x_hid: Number of time steps after folding
        n: Number of dilated convolutions
        k: Dilation of the stacked convolutions
        kernel: Kernel size of every convolution

    Raises:
        ShapeError: If ``hidden`` is not a multiple of ``x_hid``
    """

    def __init__(
        self,
        store: ParamStore,
        modality: Modality,
        hidden: int,
        x_hid: int,
        n: int,
        k: int,
        kernel: int,
    ) -> None:
        if hidden % x_hid:
            raise ShapeError(f"hidden width {hidden} does not fold into {x_hid} steps")
        channels = hidden // x_hid
        prefix = f"{modality}.{Part.TCN}"
        tag = {"part": Part.TCN, "modality": modality}
        fan_in = channels * kernel

        self.x_hid = x_hid
        self.dilation = k
        self.w_c = store.add(f"{prefix}.w_c", (channels, channels, kernel), fan_in=fan_in, **tag)
        self.w_d = [
            store.add(f"{prefix}.w_d{i}", (channels, channels, kernel), fan_in=fan_in, **tag)
            for i in range(n)
        ]


def tcn_forward(o3: Tensor, params: TcnBypass) -> Tensor:
    """``(N, hidden) -> (N, x_hid, y_hid)``: dilated(causal(fold(o3))) + fold(o3)."""

    folded = fold_tokens(o3, params.x_hid)
    h = conv1d_causal(folded.swapaxes(-1, -2), params.w_c, 1)
    for w in params.w_d:
        h = conv1d_causal(h, w, params.dilation)
    return h.swapaxes(-1, -2) + folded


def temporal_embed_add(o3: Tensor, y: Tensor) -> Tensor:
    """Add the last-step embedding ``y[..., -1, :]`` to every step of ``fold(o3)`` and flatten."""

    folded = fold_tokens(o3, y.shape[-2])
    if folded.shape != y.shape:
        raise ShapeError(f"temporal embedding {y.shape} does not match folded feature {folded.shape}")
    return unfold_tokens(folded + y[..., -1:, :])
