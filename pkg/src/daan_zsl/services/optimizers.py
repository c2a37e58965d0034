"""Gradient-descent optimizers stepping on a name -> gradient mapping."""

from typing import Mapping, Protocol

import numpy as np

from daan_zsl.errors import ContractError
from daan_zsl.services.tensor import Parameter


class Optimizer(Protocol):
    def step(self, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None: ...

    def state_dict(self) -> dict[str, np.ndarray]: ...

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None: ...


def _check(params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
    missing = sorted(set(params) - set(grads))
    if missing:
        raise ContractError(f"no gradient for parameters {missing[:3]}")


class SGD:
    def __init__(self, lr: float) -> None:
        self.lr = lr

    def step(self, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
        _check(params, grads)
        for name, param in params.items():
            param.data -= self.lr * grads[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        pass


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
        _check(params, grads)
        self.t += 1
        for name, param in params.items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(param.data))
            v = self.v.get(name, np.zeros_like(param.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            param.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"t": np.array(self.t, dtype=np.int64)}
        state.update({f"m/{k}": v.copy() for k, v in self.m.items()})
        state.update({f"v/{k}": v.copy() for k, v in self.v.items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v/")}


def build_optimizer(lr: float, pure_sgd: bool) -> Optimizer:
    return SGD(lr) if pure_sgd else Adam(lr)
