"""Regression tree fitting on gradient/hessian statistics.

Greedy splitter over equal-frequency candidate thresholds; split gain is the
usual second-order formula, leaves carry -G/(H+lambda).  Ties break to the
lowest feature index then the lowest threshold so fits are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np


@dataclass
class BoostConfig:
    rounds: int = 20
    learning_rate: float = 0.3
    max_depth: int = 3
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    max_bins: int = 32
    base_score: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning rate must be in (0, 1]")
        if self.max_bins < 2:
            raise ValueError("max_bins must be >= 2")
        if self.max_depth < 0 or self.min_child_weight < 0 or self.reg_lambda < 0:
            raise ValueError("depth / child weight / lambda must be non-negative")

    @classmethod
    def from_dict(cls, raw: dict) -> "BoostConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass
class TreeNode:
    # split node: feature/threshold/left/right set, weight unused
    # leaf node:  weight set, the rest None
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    weight: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return self.weight is not None

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Vector of leaf weights for a [n, d] matrix."""
        out = np.zeros(x.shape[0])
        self._predict_into(x, np.arange(x.shape[0]), out)
        return out

    def _predict_into(self, x, idx, out) -> None:
        if self.is_leaf:
            out[idx] = self.weight
            return
        mask = x[idx, self.feature] < self.threshold
        self.left._predict_into(x, idx[mask], out)
        self.right._predict_into(x, idx[~mask], out)

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.weight}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, raw: dict) -> "TreeNode":
        if "leaf" in raw:
            return cls(weight=float(raw["leaf"]))
        return cls(feature=int(raw["feature"]), threshold=float(raw["threshold"]),
                   left=cls.from_dict(raw["left"]), right=cls.from_dict(raw["right"]))

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def grad_hess(y: np.ndarray, pred: np.ndarray):
    """Squared-error objective: g = pred - y, h = 1."""
    y = np.asarray(y, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if y.shape != pred.shape:
        raise ValueError("y and pred must have equal length")
    return pred - y, np.ones_like(y)


def _candidate_thresholds(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Separating midpoints, at most max_bins - 1 of them, ascending."""
    vals = np.sort(values)
    n = vals.size
    uniques = np.unique(vals)
    if uniques.size <= max_bins:
        return (uniques[:-1] + uniques[1:]) / 2.0
    cuts = []
    for k in range(1, max_bins):
        i = int(round(k * n / max_bins))
        i = min(max(i, 1), n - 1)
        if vals[i - 1] < vals[i]:
            cuts.append((vals[i - 1] + vals[i]) / 2.0)
    return np.unique(np.asarray(cuts))


def fit_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray,
             cfg: BoostConfig) -> TreeNode:
    """Fit one tree to the (g, h) statistics; degenerate data yields a leaf."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("need at least one sample")
    lam = cfg.reg_lambda

    def leaf(idx) -> TreeNode:
        return TreeNode(weight=float(-g[idx].sum() / (h[idx].sum() + lam)))

    def score(gs: float, hs: float) -> float:
        return gs * gs / (hs + lam)

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        if depth >= cfg.max_depth or idx.size < 2:
            return leaf(idx)
        g_total, h_total = g[idx].sum(), h[idx].sum()
        parent = score(g_total, h_total)
        best_gain = 0.0
        best = None
        for feature in range(x.shape[1]):
            col = x[idx, feature]
            for threshold in _candidate_thresholds(col, cfg.max_bins):
                mask = col < threshold
                h_left = h[idx[mask]].sum()
                h_right = h_total - h_left
                if h_left < cfg.min_child_weight or h_right < cfg.min_child_weight:
                    continue
                g_left = g[idx[mask]].sum()
                gain = 0.5 * (score(g_left, h_left)
                              + score(g_total - g_left, h_right) - parent)
                if gain > best_gain:
                    best_gain = gain
                    best = (feature, float(threshold), mask.copy())
        if best is None:
            return leaf(idx)
        feature, threshold, mask = best
        return TreeNode(feature=feature, threshold=threshold,
                        left=build(idx[mask], depth + 1),
                        right=build(idx[~mask], depth + 1))

    return build(np.arange(x.shape[0]), 0)
