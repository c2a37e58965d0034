"""Parameter store and the small set of layers the network is assembled from."""

import hashlib
from dataclasses import dataclass
from enum import StrEnum
from typing import Iterator

import numpy as np

from daan_zsl.errors import ConfigError, ContractError, ShapeError
from daan_zsl.services.tensor import Parameter, Tensor, relu, sqrt

NORM_EPS = 1e-5
BN_MOMENTUM = 0.1


class Mode(StrEnum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class ForwardContext:
    """Per-forward switches: train/eval behaviour and the dropout generator."""

    mode: Mode
    rng: np.random.Generator | None = None

    @property
    def training(self) -> bool:
        return self.mode is Mode.TRAIN


class ParamStore:
    """Named registry of learnable parameters and non-learnable buffers.

    Every parameter may carry a ``(modality, part)`` tag; tagged parameters
    form the groups gradient modulation operates on.
    """

    def __init__(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(
        self,
        name: str,
        shape: tuple[int, ...],
        init: str = "uniform",
        fan_in: int | None = None,
        part: str | None = None,
        modality: str | None = None,
    ) -> Parameter:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        if init == "uniform":
            bound = 1.0 / np.sqrt(fan_in if fan_in else shape[0])
            data = self._rng.uniform(-bound, bound, size=shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ContractError(f"unknown initializer {init!r}")
        param = Parameter(data, name=name, part=part, modality=modality)
        self.params[name] = param
        return param

    def buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self.buffers[name] = np.array(value, dtype=np.float64)
        return self.buffers[name]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def parameter_count(self, prefix: str = "") -> int:
        return sum(p.size for name, p in self.params.items() if name.startswith(prefix))

    def groups(self) -> dict[tuple[str, str], list[Parameter]]:
        """Tagged parameters keyed by ``(modality, part)``."""

        out: dict[tuple[str, str], list[Parameter]] = {}
        for param in self.params.values():
            if param.part is not None and param.modality is not None:
                out.setdefault((param.modality, param.part), []).append(param)
        return out

    def state(self) -> dict[str, np.ndarray]:
        arrays = {f"param/{k}": p.data.copy() for k, p in self.params.items()}
        arrays.update({f"buffer/{k}": v.copy() for k, v in self.buffers.items()})
        return arrays

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter and buffer values in place."""

        for name, param in self.params.items():
            value = arrays.get(f"param/{name}")
            if value is None or value.shape != param.shape:
                raise ShapeError(f"checkpoint entry for {name!r} is missing or has the wrong shape")
            param.data[...] = value
        for name, buf in self.buffers.items():
            value = arrays.get(f"buffer/{name}")
            if value is None or value.shape != buf.shape:
                raise ShapeError(f"checkpoint buffer {name!r} is missing or has the wrong shape")
            buf[...] = value

    def digest(self) -> str:
        """sha256 over parameter names and raw bytes."""

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()


class Linear:
    """``y = x @ W (+ b)`` with ``W`` stored as ``(in, out)``."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_dim: int,
        out_dim: int,
        bias: bool = True,
        part: str | None = None,
        modality: str | None = None,
    ) -> None:
        self.weight = store.add(
            f"{name}.weight", (in_dim, out_dim), fan_in=in_dim, part=part, modality=modality
        )
        self.bias = (
            store.add(f"{name}.bias", (out_dim,), fan_in=in_dim, part=part, modality=modality)
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class BatchNorm:
    """Batch normalization over the leading axis of ``(N, F)`` inputs.

    Training mode normalizes with the batch statistics and moves the running
    estimates by ``BN_MOMENTUM`` (unbiased variance); evaluation mode uses the
    running estimates only.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        features: int,
        part: str | None = None,
        modality: str | None = None,
    ) -> None:
        self.scale = store.add(f"{name}.scale", (features,), init="ones", part=part, modality=modality)
        self.shift = store.add(f"{name}.shift", (features,), init="zeros", part=part, modality=modality)
        self.running_mean = store.buffer(f"{name}.running_mean", np.zeros(features))
        self.running_var = store.buffer(f"{name}.running_var", np.ones(features))

    def __call__(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        if x.ndim != 2:
            raise ShapeError(f"batch norm expects (N, F) input, got {x.shape}")
        if ctx.training:
            n = x.shape[0]
            if n < 2:
                raise ContractError("batch norm needs at least two rows in training mode")
            mean = x.mean(axis=0, keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=0, keepdims=True)
            x_hat = centered / sqrt(var + NORM_EPS)
            self.running_mean[...] = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mean.data[0]
            self.running_var[...] = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var.data[0] * n / (n - 1)
        else:
            x_hat = (x - self.running_mean) / np.sqrt(self.running_var + NORM_EPS)
        return x_hat * self.scale + self.shift


class GroupNorm:
    """Group normalization of ``(N, C)`` rows over ``groups`` contiguous channel groups."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        channels: int,
        groups: int,
        part: str | None = None,
        modality: str | None = None,
    ) -> None:
        if groups < 1 or channels % groups:
            raise ConfigError(f"group count {groups} does not divide {channels} channels")
        self.channels = channels
        self.groups = groups
        self.scale = store.add(f"{name}.scale", (channels,), init="ones", part=part, modality=modality)
        self.shift = store.add(f"{name}.shift", (channels,), init="zeros", part=part, modality=modality)

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        grouped = x.reshape(n, self.groups, self.channels // self.groups)
        mean = grouped.mean(axis=-1, keepdims=True)
        centered = grouped - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = (centered / sqrt(var + NORM_EPS)).reshape(n, self.channels)
        return normed * self.scale + self.shift


class LayerNorm:
    """Layer normalization over the last axis."""

    def __init__(self, store: ParamStore, name: str, dim: int) -> None:
        self.scale = store.add(f"{name}.scale", (dim,), init="ones")
        self.shift = store.add(f"{name}.shift", (dim,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / sqrt(var + NORM_EPS) * self.scale + self.shift


class Dropout:
    """Inverted dropout; identity in evaluation mode or at rate 0."""

    def __init__(self, rate: float) -> None:
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def __call__(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        if not ctx.training or self.rate == 0.0:
            return x
        if ctx.rng is None:
            raise ContractError("training-mode dropout needs a random generator")
        keep = ctx.rng.random(x.shape) >= self.rate
        return x * (keep / (1.0 - self.rate))


class ProjectionBlock:
    """Linear map followed by batch norm, ReLU and dropout."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_dim: int,
        out_dim: int,
        dropout: float,
        part: str | None = None,
        modality: str | None = None,
    ) -> None:
        self.linear = Linear(store, f"{name}.linear", in_dim, out_dim, bias=False, part=part, modality=modality)
        self.norm = BatchNorm(store, f"{name}.bn", out_dim, part=part, modality=modality)
        self.dropout = Dropout(dropout)

    def __call__(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return self.dropout(relu(self.norm(self.linear(x), ctx)), ctx)
