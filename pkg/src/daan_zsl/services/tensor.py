"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active, every
operation with at least one input that requires a gradient appends a node to
that tape; the reverse sweep replays the nodes in reverse recorded order, so
each node is visited exactly once.

Backward rules receive the upstream gradient with one extra *leading seed
axis* of size ``S``: ``g.shape == (S, *output.shape)``. A scalar backward uses
``S == 1``; :meth:`Tape.per_seed_gradients` uses one seed per entry of a
vector output, which yields every per-sample gradient in a single sweep.
"""

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from daan_zsl.errors import ContractError, NumericError, ParameterError, ShapeError

BackwardRule = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "daan_active_tape", default=None
)


class Tensor:
    """A float64 array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = ""
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def flat(self) -> np.ndarray:
        """Row-major flat view of the data."""

        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __radd__(self, other) -> "Tensor":
        return add(other, self)

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other) -> "Tensor":
        return div(other, self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other) -> "Tensor":
        return matmul(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, p: float) -> "Tensor":
        return power(self, p)

    def __getitem__(self, idx) -> "Tensor":
        return index(self, idx)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)


class Parameter(Tensor):
    """A learnable leaf tensor tagged with the network part it belongs to."""

    __slots__ = ("part", "modality")

    def __init__(
        self,
        data,
        name: str,
        part: str | None = None,
        modality: str | None = None,
    ) -> None:
        super().__init__(data, requires_grad=True, name=name)
        self.part = part
        self.modality = modality

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, part={self.part!r})"


@dataclass(eq=False)
class Node:
    """One recorded operation."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager; a tape is bound to the current context only, so
    concurrent forward passes on other threads never share it.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise ContractError("tape is already recording")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Write d(loss)/d(leaf) into ``.grad`` of every leaf that requires one."""

        if loss.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = self._sweep(loss, np.ones((1,), dtype=np.float64))
        for leaf, g in grads.values():
            leaf.grad = np.array(g[0])

    def per_seed_gradients(
        self,
        output: Tensor,
        wrt: Sequence[Tensor],
        seeds: np.ndarray | None = None,
    ) -> list[np.ndarray]:
        """Gradients of several cotangents of ``output`` in one reverse sweep.

        ``seeds`` has shape ``(S, *output.shape)`` and defaults to the identity
        over the entries of a vector output, so entry ``s`` of each result is the
        gradient of ``output[s]``. Results have shape ``(S, *param.shape)``.
        """

        if seeds is None:
            if output.ndim != 1:
                raise ContractError(
                    f"default seeds need a vector output, got shape {output.shape}"
                )
            seeds = np.eye(output.shape[0])
        seeds = np.asarray(seeds, dtype=np.float64)
        if seeds.shape[1:] != output.shape:
            raise ShapeError(
                f"seed shape {seeds.shape} does not extend output shape {output.shape}"
            )
        grads = self._sweep(output, seeds)
        zeros_like = lambda t: np.zeros((seeds.shape[0],) + t.shape)  # noqa: E731
        return [grads[id(t)][1] if id(t) in grads else zeros_like(t) for t in wrt]

    def _sweep(self, output: Tensor, seed: np.ndarray) -> dict[int, tuple[Tensor, np.ndarray]]:
        if not self.nodes:
            raise ContractError("tape is empty; nothing to differentiate")
        if not output.requires_grad:
            raise ContractError("output does not depend on any tensor that requires grad")

        produced = {id(node.output) for node in self.nodes}
        pending: dict[int, np.ndarray] = {id(output): seed}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}

        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in produced:
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
                else:
                    prev_leaf = leaves.get(key)
                    leaves[key] = (inp, gi if prev_leaf is None else prev_leaf[1] + gi)
        return leaves


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(op: str, inputs: tuple[Tensor, ...], data: np.ndarray, rule: BackwardRule) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(op)
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, tracked)
    if tracked:
        tape.nodes.append(Node(op, inputs, out, rule))
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a seed-led gradient back down to an operand's broadcast shape."""

    lead = g.ndim - 1 - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(1, 1 + lead)))
    axes = tuple(i + 1 for i, n in enumerate(shape) if n == 1 and g.shape[i + 1] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _record(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div", "division by zero")
    return _record(
        "div",
        (a, b),
        a.data / b.data,
        lambda g: (
            _reduce_to(g / b.data, a.shape),
            _reduce_to(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _record("neg", (x,), -x.data, lambda g: (-g,))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    return _record("pow", (x,), x.data**p, lambda g: (g * p * x.data ** (p - 1),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)
    return _record("exp", (x,), out_data, lambda g: (g * out_data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt", "negative input")
    out_data = np.sqrt(x.data)
    return _record("sqrt", (x,), out_data, lambda g: (g * 0.5 / out_data,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading batch axes."""

    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from exc

    def rule(g: np.ndarray):
        ga = _reduce_to(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _reduce_to(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record("matmul", (a, b), a.data @ b.data, rule)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max-subtraction."""

    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows", "non-finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax_rows", (x,), y, rule)


def row_norm(x) -> Tensor:
    """Euclidean norm over the last axis (gradient taken as 0 at the origin)."""

    x = as_tensor(x)
    out_data = np.sqrt((x.data * x.data).sum(axis=-1))

    def rule(g: np.ndarray):
        denom = out_data[..., None]
        unit = np.divide(
            x.data, denom, out=np.zeros_like(x.data), where=np.broadcast_to(denom > 0, x.shape)
        )
        return (g[..., None] * unit,)

    return _record("row_norm", (x,), out_data, rule)


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        data = x.data.sum(keepdims=keepdims)

        def rule(g: np.ndarray):
            flat = g.reshape((g.shape[0],) + (1,) * x.ndim)
            return (np.broadcast_to(flat, (g.shape[0],) + x.shape),)

        return _record("sum", (x,), np.asarray(data, dtype=np.float64), rule)

    ax = axis % x.ndim

    def rule_axis(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, ax + 1)
        return (np.broadcast_to(g, (g.shape[0],) + x.shape),)

    return _record("sum", (x,), x.data.sum(axis=ax, keepdims=keepdims), rule_axis)


def reduce_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return _record(
        "reshape", (x,), data, lambda g: (g.reshape((g.shape[0],) + x.shape),)
    )


def swapaxes(x, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    a1, a2 = axis1 % x.ndim, axis2 % x.ndim
    return _record(
        "swapaxes",
        (x,),
        np.swapaxes(x.data, a1, a2),
        lambda g: (np.swapaxes(g, a1 + 1, a2 + 1),),
    )


def index(x, idx) -> Tensor:
    """Basic slicing (ints, slices, Ellipsis) with a scatter backward."""

    x = as_tensor(x)
    key = idx if isinstance(idx, tuple) else (idx,)
    for part in key:
        if not isinstance(part, (int, slice, type(Ellipsis))):
            raise ContractError(f"only basic indexing is supported, got {type(part).__name__}")

    def rule(g: np.ndarray):
        full = np.zeros((g.shape[0],) + x.shape)
        full[(slice(None),) + key] = g
        return (full,)

    return _record("index", (x,), np.array(x.data[key]), rule)


def conv1d_causal(x, w, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution.

    ``x`` is ``(..., C_in, T)`` and ``w`` is ``(C_out, C_in, K)``; the input is
    left-padded with ``(K - 1) * dilation`` zeros so the output keeps length
    ``T`` and ``y[:, t] = sum_n w[:, :, n] @ x[:, t - n * dilation]``.
    """

    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 3:
        raise ShapeError(f"conv1d_causal: kernel must be (C_out, C_in, K), got {w.shape}")
    c_out, c_in, k = w.shape
    if k < 1 or dilation < 1:
        raise ParameterError(
            f"conv1d_causal: kernel size and dilation must be positive (K={k}, dilation={dilation})"
        )
    if x.ndim < 2 or x.shape[-2] != c_in:
        raise ShapeError(f"conv1d_causal: input {x.shape} does not match kernel {w.shape}")

    steps = x.shape[-1]
    pad = (k - 1) * dilation
    padded = np.pad(x.data, [(0, 0)] * (x.ndim - 1) + [(pad, 0)])
    starts = [pad - n * dilation for n in range(k)]
    taps = [padded[..., s : s + steps] for s in starts]

    out = np.zeros(x.shape[:-2] + (c_out, steps))
    for n, tap in enumerate(taps):
        out = out + w.data[:, :, n] @ tap

    def rule(g: np.ndarray):
        gw = np.stack(
            [_reduce_to(g @ np.swapaxes(tap, -1, -2), (c_out, c_in)) for tap in taps],
            axis=-1,
        )
        g_padded = np.zeros((g.shape[0],) + padded.shape)
        for n, s in enumerate(starts):
            g_padded[..., s : s + steps] += w.data[:, :, n].T @ g
        return g_padded[..., pad:], gw

    return _record("conv1d_causal", (x, w), out, rule)
