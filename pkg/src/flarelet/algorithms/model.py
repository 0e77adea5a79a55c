"""Two-layer perceptron with manual float64 gradients.

Parameters are an ordered dict {w1: [h,d], b1: [h], w2: [c,h], b2: [c]}.
Everything is plain numpy so runs reproduce bit-for-bit given a seed.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core.dxo import Dxo, DxoKind

PARAM_KEYS = ("w1", "b1", "w2", "b2")


class TrainingError(RuntimeError):
    pass


def init_params(dim: int, hidden: int, classes: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "w1": rng.normal(0.0, np.sqrt(2.0 / dim), (hidden, dim)),
        "b1": np.zeros(hidden),
        "w2": rng.normal(0.0, np.sqrt(2.0 / hidden), (classes, hidden)),
        "b2": np.zeros(classes),
    }


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def params_add(a: dict, b: dict, scale: float = 1.0) -> dict:
    return {k: a[k] + scale * b[k] for k in a}


def params_sub(a: dict, b: dict) -> dict:
    return {k: a[k] - b[k] for k in a}


def params_scale(a: dict, scale: float) -> dict:
    return {k: scale * a[k] for k in a}


def params_allclose(a: dict, b: dict, atol: float = 0.0) -> bool:
    return all(np.allclose(a[k], b[k], rtol=0.0, atol=atol) for k in a)


def params_equal_bits(a: dict, b: dict) -> bool:
    return all(a[k].tobytes() == b[k].tobytes() for k in a)


def max_param_diff(a: dict, b: dict) -> float:
    return max(float(np.max(np.abs(a[k] - b[k]))) if a[k].size else 0.0
               for k in a)


def params_to_dxo(params: dict, kind: DxoKind = DxoKind.WEIGHTS,
                  meta: Optional[dict] = None) -> Dxo:
    return Dxo(kind, data={k: np.asarray(v, dtype=np.float64) for k, v in
                           params.items()}, meta=meta)


def params_from_dxo(dxo: Dxo) -> dict:
    return {k: np.asarray(v, dtype=np.float64) for k, v in dxo.data.items()}


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: dict, x: np.ndarray):
    z1 = x @ params["w1"].T + params["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["w2"].T + params["b2"]
    return z1, a1, _softmax(z2)


def loss_and_grads(params: dict, x: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and its gradients for a labelled batch."""
    n = x.shape[0]
    z1, a1, probs = forward(params, x)
    eps = 1e-12
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + eps)))
    dz2 = probs.copy()
    dz2[np.arange(n), y] -= 1.0
    dz2 /= n
    grads = {
        "w2": dz2.T @ a1,
        "b2": dz2.sum(axis=0),
    }
    da1 = dz2 @ params["w2"]
    dz1 = da1 * (z1 > 0.0)
    grads["w1"] = dz1.T @ x
    grads["b1"] = dz1.sum(axis=0)
    return loss, {k: grads[k] for k in PARAM_KEYS}


def evaluate(params: dict, x: np.ndarray, y: np.ndarray):
    """(accuracy, mean loss) on a labelled set."""
    _, _, probs = forward(params, x)
    pred = probs.argmax(axis=1)
    eps = 1e-12
    loss = float(-np.mean(np.log(probs[np.arange(len(y)), y] + eps)))
    return float(np.mean(pred == y)), loss
