"""Two-party split of the two-layer classifier.

The feature holder owns the input layer (linear + ReLU), the label holder
owns the output layer (linear + softmax cross-entropy).  Composed updates
reproduce centralized training on the same seed and batch order exactly,
which is the correctness oracle for the whole protocol.
"""

from __future__ import annotations

import numpy as np

from ..algorithms.model import init_params


def split_params(dim: int, hidden: int, classes: int, seed: int) -> tuple:
    """(feature-side params, label-side params) from the shared init."""
    params = init_params(dim, hidden, classes, seed)
    return ({"w1": params["w1"], "b1": params["b1"]},
            {"w2": params["w2"], "b2": params["b2"]})


class FeatureParty:
    """Holds sample features and the cut's input layer."""

    def __init__(self, features: dict, dim: int, hidden: int, classes: int,
                 seed: int):
        self.features = features  # id -> 1-D feature vector
        self.params, _ = split_params(dim, hidden, classes, seed)
        self._cache = {}

    def forward(self, ids, step: int) -> np.ndarray:
        x = np.stack([self.features[i] for i in ids])
        z1 = x @ self.params["w1"].T + self.params["b1"]
        a1 = np.maximum(z1, 0.0)
        self._cache[step] = (x, z1)
        return a1

    def backward(self, grad_a1: np.ndarray, step: int, lr: float) -> None:
        if step not in self._cache:
            raise ProtocolStateError(f"no cached forward for step {step}")
        x, z1 = self._cache.pop(step)
        dz1 = grad_a1 * (z1 > 0.0)
        self.params["w1"] = self.params["w1"] - lr * (dz1.T @ x)
        self.params["b1"] = self.params["b1"] - lr * dz1.sum(axis=0)


class LabelParty:
    """Holds sample labels and the cut's output layer."""

    def __init__(self, labels: dict, dim: int, hidden: int, classes: int,
                 seed: int):
        self.labels = labels  # id -> int label
        _, self.params = split_params(dim, hidden, classes, seed)
        self.classes = classes

    def step(self, activations: np.ndarray, ids, lr: float) -> tuple:
        """(loss, gradient w.r.t. activations); updates the output layer."""
        y = np.asarray([self.labels[i] for i in ids])
        n = activations.shape[0]
        z2 = activations @ self.params["w2"].T + self.params["b2"]
        z2 = z2 - z2.max(axis=1, keepdims=True)
        e = np.exp(z2)
        probs = e / e.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-12)))
        dz2 = probs
        dz2[np.arange(n), y] -= 1.0
        dz2 /= n
        # gradient w.r.t. activations uses the pre-update weights
        grad_a1 = dz2 @ self.params["w2"]
        self.params["w2"] = self.params["w2"] - lr * (dz2.T @ activations)
        self.params["b2"] = self.params["b2"] - lr * dz2.sum(axis=0)
        return loss, grad_a1


class ProtocolStateError(RuntimeError):
    pass


def composed_params(feature_party: FeatureParty, label_party: LabelParty) -> dict:
    return {"w1": feature_party.params["w1"], "b1": feature_party.params["b1"],
            "w2": label_party.params["w2"], "b2": label_party.params["b2"]}


def centralized_reference(x: np.ndarray, y: np.ndarray, batches, lr: float,
                          hidden: int, classes: int, seed: int) -> tuple:
    """Plain SGD on the un-split model over the same batch sequence."""
    from ..algorithms.model import loss_and_grads

    params = init_params(x.shape[1], hidden, classes, seed)
    losses = []
    for batch in batches:
        loss, grads = loss_and_grads(params, x[batch], y[batch])
        losses.append(loss)
        for key in params:
            params[key] = params[key] - lr * grads[key]
    return params, losses
