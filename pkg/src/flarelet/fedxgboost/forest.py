"""Boosted forest: per-round groups of scaled client trees.

Each federated round appends one group holding the K trees the clients
returned, each scaled by learning_rate / K, so a single-client run reduces
exactly to centralized boosting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tree import BoostConfig, TreeNode, fit_tree, grad_hess


@dataclass
class Forest:
    base_score: float = 0.0
    rounds: list = field(default_factory=list)  # list of [(TreeNode, scale)]

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        out = np.full(x.shape[0], self.base_score, dtype=np.float64)
        for group in self.rounds:
            for tree, scale in group:
                out += scale * tree.predict(x)
        return out

    def append_round(self, trees: list, learning_rate: float) -> None:
        if not trees:
            return
        scale = learning_rate / len(trees)
        self.rounds.append([(tree, scale) for tree in trees])

    def num_rounds(self) -> int:
        return len(self.rounds)

    def to_json(self) -> str:
        return json.dumps({
            "base_score": self.base_score,
            "rounds": [[{"scale": scale, "tree": tree.to_dict()}
                        for tree, scale in group] for group in self.rounds],
        })

    @classmethod
    def from_json(cls, raw: str) -> "Forest":
        doc = json.loads(raw)
        forest = cls(base_score=float(doc.get("base_score", 0.0)))
        for group in doc.get("rounds", []):
            forest.rounds.append([
                (TreeNode.from_dict(item["tree"]), float(item["scale"]))
                for item in group])
        return forest


def fit_local_tree(forest: Forest, x: np.ndarray, y: np.ndarray,
                   cfg: BoostConfig) -> TreeNode:
    """One boosting step against the current global forest's predictions."""
    pred = forest.predict(x)
    g, h = grad_hess(np.asarray(y, dtype=np.float64), pred)
    return fit_tree(x, g, h, cfg)


def federated_boost_round(forest: Forest, shards: dict,
                          cfg: BoostConfig) -> list:
    """Fit one tree per client shard and bag them into the forest.

    ``shards`` maps client name -> (x, y).  Clients are visited in name order
    for determinism.  Returns the trees of the appended group.
    """
    trees = [fit_local_tree(forest, *shards[client], cfg)
             for client in sorted(shards)]
    forest.append_round(trees, cfg.learning_rate)
    return trees


def centralized_boost(x: np.ndarray, y: np.ndarray, cfg: BoostConfig) -> Forest:
    """Plain sequential boosting, the single-client reference."""
    forest = Forest(base_score=cfg.base_score)
    for _ in range(cfg.rounds):
        tree = fit_local_tree(forest, x, y, cfg)
        forest.append_round([tree], cfg.learning_rate)
    return forest


def rmse(y: np.ndarray, pred: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    return float(np.sqrt(np.mean((y - pred) ** 2)))


def make_regression(n: int, dim: int = 8, seed: int = 0, noise: float = 0.5):
    """Smooth nonlinear synthetic regression task."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, (n, dim))
    y = (10.0 * np.sin(np.pi * x[:, 0] * x[:, 1])
         + 20.0 * (x[:, 2] - 0.5) ** 2
         + 10.0 * x[:, 3] + 5.0 * x[:, 4]
         + noise * rng.normal(size=n))
    return x, y
