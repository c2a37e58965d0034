"""Brute-force reference implementations for the tests.

Nothing here imports from ``daan_zsl``; every routine works on plain numpy
arrays and Python floats so it shares no code path with the package.
"""

import math
from typing import Callable

import numpy as np

FD_STEP = 1e-5


class OracleError(ArithmeticError):
    pass


def fd_gradient(f: Callable[[np.ndarray], float], point: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per coordinate."""

    if h <= 0:
        raise OracleError("finite-difference step must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise OracleError(f"non-finite function value at coordinate {i}")
        gflat[i] = (up - down) / (2 * h)
    return grad


def _dist(x: np.ndarray, y: np.ndarray) -> float:
    return math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(x, y)))


def _mse(x: np.ndarray, y: np.ndarray) -> float:
    return sum((float(a) - float(b)) ** 2 for a, b in zip(x, y)) / len(x)


def _hinge(anchor, positive, negative, margin: float) -> float:
    return max(0.0, _dist(anchor, positive) - _dist(anchor, negative) + margin)


def recompute_losses(raw: dict, margin: float, rec: str = "mean-squared") -> dict[str, float]:
    """Batch means of every loss term, evaluated one pair and one scalar at a time.

    ``raw`` maps ``theta_pos``, ``theta_neg``, ``rho_pos``, ``rho_neg`` to
    ``{"audio", "visual", "text"}`` arrays, ``phi`` to ``{"audio", "visual",
    "text"}``, ``phi_rec`` to ``{"audio", "visual"}`` and ``target`` to the
    anchor texts, all ``(B, dim)``.
    """

    rec_fn = _dist if rec == "euclidean" else _mse
    tp, tn, rp, rn = raw["theta_pos"], raw["theta_neg"], raw["rho_pos"], raw["rho_neg"]
    phi, phi_rec, target = raw["phi"], raw["phi_rec"], raw["target"]
    batch = target.shape[0]
    sums = {"L_t": 0.0, "l_rec": 0.0, "l_ct": 0.0, "l_w": 0.0, "L_r": 0.0}

    for b in range(batch):
        a_p, v_p, w_p = tp["audio"][b], tp["visual"][b], tp["text"][b]
        a_n, v_n, w_n = tn["audio"][b], tn["visual"][b], tn["text"][b]
        sums["L_t"] += (
            _hinge(a_p, w_p, a_n, margin)
            + _hinge(v_p, w_p, v_n, margin)
            + _hinge(w_p, a_p, w_n, margin)
            + _hinge(w_p, v_p, w_n, margin)
        )
        sums["l_rec"] += (
            rec_fn(rp["audio"][b], target[b])
            + rec_fn(rp["visual"][b], target[b])
            + rec_fn(rp["text"][b], target[b])
        )
        sums["l_ct"] += _hinge(rp["text"][b], rp["audio"][b], rn["audio"][b], margin) + _hinge(
            rp["text"][b], rp["visual"][b], rn["visual"][b], margin
        )
        sums["l_w"] += (
            _hinge(w_p, a_p, a_n, margin)
            + _hinge(w_p, v_p, v_n, margin)
            + _hinge(a_p, w_p, w_n, margin)
            + _hinge(v_p, w_p, w_n, margin)
        )
        sums["L_r"] += (
            _dist(phi_rec["audio"][b], phi["audio"][b])
            + _dist(phi_rec["visual"][b], phi["visual"][b])
            + _dist(phi["audio"][b], phi["text"][b])
            + _dist(phi["visual"][b], phi["text"][b])
        )

    out = {k: v / batch for k, v in sums.items()}
    out["total"] = sum(out.values())
    return out


def softmax(row: np.ndarray) -> np.ndarray:
    shifted = [math.exp(float(v) - max(row)) for v in row]
    total = sum(shifted)
    return np.array([s / total for s in shifted])


def direct_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``softmax(q k^T / sqrt(d)) v`` one query row at a time."""

    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = np.array([sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(k.shape[0])])
        weights = softmax(scores)
        for j in range(k.shape[0]):
            out[i] += weights[j] * v[j]
    return out


def nested_loop_conv(x: np.ndarray, w: np.ndarray, dilation: int) -> np.ndarray:
    """Causal dilated convolution of ``x (C_in, T)`` with ``w (C_out, C_in, K)``."""

    c_out, c_in, k = w.shape
    steps = x.shape[1]
    y = np.zeros((c_out, steps))
    for o in range(c_out):
        for t in range(steps):
            acc = 0.0
            for i in range(c_in):
                for n in range(k):
                    src = t - n * dilation
                    if src >= 0:
                        acc += w[o, i, n] * x[i, src]
            y[o, t] = acc
    return y


def nearest_scan(query: np.ndarray, candidates: np.ndarray, ids: list[int]) -> int:
    """Exhaustive nearest candidate; the first minimum in ascending id order wins."""

    best_id, best = None, math.inf
    for cid in sorted(ids):
        d = _dist(query, candidates[ids.index(cid)])
        if d < best:
            best_id, best = cid, d
    return best_id
