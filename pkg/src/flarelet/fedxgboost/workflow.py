"""Federated boosting as a workflow: broadcast forest, bag returned trees."""

from __future__ import annotations

import json

import numpy as np

from ..client.executor import AbortSignal, Executor
from ..core.context import FLContext
from ..core.dxo import Dxo, DxoKind
from ..core.shareable import ReturnCode, Shareable
from ..server.controller import ControllerContext, Workflow
from .forest import Forest, fit_local_tree, make_regression, rmse
from .tree import BoostConfig, TreeNode

BOOST_TASK = "xgb_round"

DEFAULT_DATA = {"n": 1200, "dim": 8, "seed": 0, "noise": 0.5}


def _shard(args: dict, site_index: int, num_sites: int):
    data_args = dict(DEFAULT_DATA)
    data_args.update(args.get("data", {}))
    x, y = make_regression(**data_args)
    return x[site_index::num_sites], y[site_index::num_sites]


class XgbExecutor(Executor):
    def __init__(self, args: dict, site_ctx: dict):
        super().__init__(f"xgb@{site_ctx.get('site', '?')}")
        self.cfg = BoostConfig.from_dict(args.get("boost", {}))
        self.x, self.y = _shard(args, site_ctx.get("site_index", 0),
                                site_ctx.get("num_sites", 1))

    def execute(self, task_name: str, shareable: Shareable, ctx: FLContext,
                abort: AbortSignal) -> Shareable:
        request = shareable.dxo()
        forest = Forest.from_json(request.meta["forest"])
        tree = fit_local_tree(forest, self.x, self.y, self.cfg)
        out = Dxo(DxoKind.COLLECTION, data={},
                  meta={"tree": json.dumps(tree.to_dict()),
                        "n": int(self.x.shape[0])})
        return Shareable.from_dxo(out, headers=dict(shareable.headers))


class XgbController(Workflow):
    def __init__(self, args: dict):
        super().__init__("fedxgboost")
        self.cfg = BoostConfig.from_dict(args.get("boost", {}))
        self.data_args = dict(DEFAULT_DATA)
        self.data_args.update(args.get("data", {}))
        self.wait_s = float(args.get("round_wait_s", 60.0))
        self.min_responses = int(args.get("min_responses", 1))
        self.forest = Forest(base_score=self.cfg.base_score)
        self.start_round = 0
        self.metrics: list = []

    def run(self, ctx: ControllerContext) -> dict:
        x_pool, y_pool = make_regression(**self.data_args)
        for round_index in range(self.start_round, self.cfg.rounds):
            request = Shareable.from_dxo(Dxo(
                DxoKind.COLLECTION, meta={"forest": self.forest.to_json()}))
            replies = ctx.broadcast_and_wait(
                BOOST_TASK, request.with_headers({"round": round_index}),
                self.wait_s, min_responses=self.min_responses)
            trees = []
            for site in sorted(replies):
                reply = replies[site]
                if reply.return_code is not ReturnCode.OK:
                    continue
                meta = reply.dxo().meta
                trees.append(TreeNode.from_dict(json.loads(meta["tree"])))
            if not trees:
                ctx.audit("round_failed", f"round={round_index}: no trees")
                raise RuntimeError(f"boost round {round_index} got no trees")
            self.forest.append_round(trees, self.cfg.learning_rate)
            error = rmse(y_pool, self.forest.predict(x_pool))
            self.metrics.append({"round": round_index, "rmse": error})
            ctx.log_metric({"round": round_index, "accuracy": -error,
                            "loss": error})
            ctx.audit("round_completed", f"round={round_index}")
            self.start_round = round_index + 1
            ctx.save_snapshot(self.get_state())
        return {"forest": self.forest.to_json(), "metrics": self.metrics}

    def get_state(self) -> dict:
        return {"round": self.start_round, "forest": self.forest.to_json(),
                "metrics": self.metrics}

    def restore_state(self, state: dict) -> None:
        self.start_round = int(state["round"])
        self.forest = Forest.from_json(state["forest"])
        self.metrics = list(state["metrics"])


def register() -> None:
    from ..registry import register_executor, register_workflow
    register_workflow("fedxgboost", XgbController)
    register_executor("xgb_executor", XgbExecutor)
