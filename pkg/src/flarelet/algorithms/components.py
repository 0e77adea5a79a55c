"""Workflow and executor components for the reference FL algorithms."""

from __future__ import annotations

import logging

import numpy as np

from ..client.executor import AbortSignal, Executor
from ..core.context import FLContext
from ..core.dxo import Dxo, DxoKind
from ..core.events import EventType
from ..core.shareable import ReturnCode, Shareable
from ..server.controller import ControllerContext, Workflow
from ..server.snapshot import blob_from_b64, blob_to_b64
from .data import dirichlet_partition, make_dataset
from .model import (evaluate, init_params, params_from_dxo, params_to_dxo,
                    zeros_like_params)
from .training import (SCAFFOLD, TrainConfig, TrainingError,
                       aggregate_weighted, local_train,
                       scaffold_server_update, server_update)

log = logging.getLogger("flarelet.algorithms")

DEFAULT_DATASET = {"train_n": 20_000, "test_n": 4_000, "dim": 32,
                   "classes": 10, "seed": 0}


class WorkflowFailed(RuntimeError):
    pass


def _dataset_args(args: dict) -> dict:
    merged = dict(DEFAULT_DATASET)
    merged.update(args.get("dataset", {}))
    return merged


def _params_dxo_bytes(dxo: Dxo) -> bytes:
    from ..core.dxo import dxo_encode
    return dxo_encode(dxo)


class TrainExecutor(Executor):
    """Client-side local training on a Dirichlet shard of the synthetic task."""

    def __init__(self, args: dict, site_ctx: dict):
        super().__init__(f"train@{site_ctx.get('site', '?')}")
        self.cfg = TrainConfig.from_dict(args.get("train", {}))
        self.site_index = site_ctx.get("site_index", 0)
        self.num_sites = site_ctx.get("num_sites", 1)
        self.alpha = float(args.get("alpha", 1.0))
        self.dataset_args = _dataset_args(args)
        self._shard = None
        self._control = None  # local control variate, persists across rounds

    def _ensure_shard(self):
        if self._shard is None:
            x, y, _, _ = make_dataset(**self.dataset_args)
            parts = dirichlet_partition(y, self.num_sites, self.alpha,
                                        seed=self.dataset_args["seed"])
            idx = parts[self.site_index]
            self._shard = (x[idx], y[idx])
        return self._shard

    def execute(self, task_name: str, shareable: Shareable, ctx: FLContext,
                abort: AbortSignal) -> Shareable:
        dxo = shareable.dxo()
        round_index = int(shareable.headers.get("round", "0"))
        variant = self.cfg.variant
        if dxo.kind is DxoKind.COLLECTION:
            global_params = params_from_dxo(dxo.data["weights"])
            control_global = params_from_dxo(dxo.data["control"])
        else:
            global_params = params_from_dxo(dxo)
            control_global = None
        x, y = self._ensure_shard()
        if variant == SCAFFOLD and self._control is None:
            self._control = zeros_like_params(global_params)

        rng = np.random.default_rng(
            (self.cfg.seed, self.site_index, round_index))
        delta, n, delta_control = local_train(
            global_params, x, y, self.cfg, rng, variant=variant,
            control_local=self._control, control_global=control_global)

        if task_name.startswith("cyclic"):
            # relay semantics: pass trained weights onward, not a diff
            trained = {k: global_params[k] + delta[k] for k in delta}
            out = params_to_dxo(trained, DxoKind.WEIGHTS,
                                meta={"n": n, "site": self.id})
            return Shareable.from_dxo(out, headers=dict(shareable.headers))

        meta = {"n": n, "NUM_STEPS_CURRENT_ROUND":
                int(np.ceil(x.shape[0] / self.cfg.batch_size))
                * self.cfg.local_epochs if not self.cfg.local_steps
                else self.cfg.local_steps}
        if variant == SCAFFOLD:
            self._control = {k: self._control[k] + delta_control[k]
                             for k in self._control}
            out = Dxo(DxoKind.COLLECTION, data={
                "delta": params_to_dxo(delta, DxoKind.WEIGHT_DIFF),
                "control_delta": params_to_dxo(delta_control,
                                               DxoKind.WEIGHT_DIFF),
            }, meta=meta)
        else:
            out = params_to_dxo(delta, DxoKind.WEIGHT_DIFF, meta=meta)
        return Shareable.from_dxo(out, headers=dict(shareable.headers))


class ScatterAndGather(Workflow):
    """Broadcast-train-aggregate rounds with per-round snapshot and metrics."""

    def __init__(self, args: dict):
        super().__init__("scatter_and_gather")
        self.cfg = TrainConfig.from_dict(args.get("train", {}))
        self.dataset_args = _dataset_args(args)
        self.rounds = int(args.get("rounds", self.cfg.num_rounds))
        self.min_responses = int(args.get("min_responses",
                                          self.cfg.min_clients))
        self.wait_s = float(args.get("round_wait_s", 120.0))
        self.params = None
        self.momentum = None
        self.control = None
        self.start_round = 0
        self.best_accuracy = -1.0
        self.metrics: list = []

    def _init_model(self):
        if self.params is None:
            self.params = init_params(self.dataset_args["dim"], self.cfg.hidden,
                                      self.dataset_args["classes"],
                                      self.cfg.seed)
            self.momentum = zeros_like_params(self.params)
            self.control = zeros_like_params(self.params)

    def run(self, ctx: ControllerContext) -> dict:
        self._init_model()
        _, _, x_test, y_test = make_dataset(**self.dataset_args)
        num_clients = max(len(ctx.live_clients()), 1)

        for round_index in range(self.start_round, self.rounds):
            results = self._round_once(ctx, round_index)
            if results is None:  # retried once already
                raise WorkflowFailed(
                    f"round {round_index}: fewer than {self.min_responses} results")
            contributions, control_deltas = self._parse(results)
            ctx.fire(EventType.BEFORE_AGGREGATION, {"round": round_index})
            delta, used = aggregate_weighted(contributions, audit=ctx.audit)
            ctx.fire(EventType.AFTER_AGGREGATION,
                     {"round": round_index, "clients": used})
            self.params, self.momentum = server_update(
                self.params, delta, self.cfg, self.momentum)
            if control_deltas:
                self.control = scaffold_server_update(
                    self.control, control_deltas, len(control_deltas),
                    num_clients)

            accuracy, loss = evaluate(self.params, x_test, y_test)
            self.metrics.append({"round": round_index, "accuracy": accuracy,
                                 "loss": loss})
            ctx.log_metric({"round": round_index, "accuracy": accuracy,
                            "loss": loss})
            if accuracy > self.best_accuracy:
                self.best_accuracy = accuracy
                ctx.fire(EventType.BEST_MODEL_SELECTED,
                         {"round": round_index, "accuracy": accuracy})
            ctx.audit("round_completed", f"round={round_index}")
            self.start_round = round_index + 1
            ctx.save_snapshot(self.get_state())

        return {"model": blob_to_b64(_params_dxo_bytes(
                    params_to_dxo(self.params))),
                "metrics": self.metrics,
                "best_accuracy": self.best_accuracy}

    def _round_once(self, ctx: ControllerContext, round_index: int):
        payload = self._task_payload()
        for attempt in range(2):
            results = ctx.broadcast_and_wait(
                "train", payload.with_headers({"round": round_index}),
                wait_time_s=self.wait_s, min_responses=self.min_responses)
            ok = {c: s for c, s in results.items()
                  if s.return_code is ReturnCode.OK}
            if len(ok) >= self.min_responses:
                return ok
            ctx.audit("round_retry", f"round={round_index} attempt={attempt}")
        return None

    def _task_payload(self) -> Shareable:
        if self.cfg.variant == SCAFFOLD:
            dxo = Dxo(DxoKind.COLLECTION, data={
                "weights": params_to_dxo(self.params),
                "control": params_to_dxo(self.control)})
        else:
            dxo = params_to_dxo(self.params)
        return Shareable.from_dxo(dxo)

    def _parse(self, results: dict):
        contributions = {}
        control_deltas = []
        for client in sorted(results):
            dxo = results[client].dxo()
            if dxo is None:
                continue
            if dxo.kind is DxoKind.COLLECTION:
                delta = params_from_dxo(dxo.data["delta"])
                control_deltas.append(params_from_dxo(dxo.data["control_delta"]))
            else:
                delta = params_from_dxo(dxo)
            contributions[client] = (delta, int(dxo.meta.get("n", 1)))
        return contributions, control_deltas

    def get_state(self) -> dict:
        return {
            "round": self.start_round,
            "params": blob_to_b64(_params_dxo_bytes(params_to_dxo(self.params))),
            "momentum": blob_to_b64(_params_dxo_bytes(
                params_to_dxo(self.momentum))),
            "control": blob_to_b64(_params_dxo_bytes(
                params_to_dxo(self.control))),
            "best_accuracy": self.best_accuracy,
            "metrics": self.metrics,
        }

    def restore_state(self, state: dict) -> None:
        from ..core.dxo import dxo_decode
        self.start_round = int(state["round"])
        self.params = params_from_dxo(dxo_decode(blob_from_b64(state["params"])))
        self.momentum = params_from_dxo(
            dxo_decode(blob_from_b64(state["momentum"])))
        self.control = params_from_dxo(
            dxo_decode(blob_from_b64(state["control"])))
        self.best_accuracy = float(state["best_accuracy"])
        self.metrics = list(state["metrics"])


class CyclicController(Workflow):
    """Sequential model relay, optionally reshuffled each round."""

    def __init__(self, args: dict):
        super().__init__("cyclic")
        self.cfg = TrainConfig.from_dict(args.get("train", {}))
        self.dataset_args = _dataset_args(args)
        self.rounds = int(args.get("rounds", 1))
        self.order_mode = args.get("order", "fixed")
        self.hop_wait_s = float(args.get("hop_wait_s", 60.0))
        self.params = None
        self.start_round = 0

    def run(self, ctx: ControllerContext) -> dict:
        if self.params is None:
            self.params = init_params(self.dataset_args["dim"], self.cfg.hidden,
                                      self.dataset_args["classes"],
                                      self.cfg.seed)
        clients = ctx.live_clients()
        if len(clients) < 2:
            raise WorkflowFailed("cyclic workflow needs at least 2 clients")
        for round_index in range(self.start_round, self.rounds):
            order = list(clients)
            if self.order_mode == "random":
                rng = np.random.default_rng((self.cfg.seed, round_index))
                order = [clients[i] for i in rng.permutation(len(clients))]
            payload = Shareable.from_dxo(params_to_dxo(self.params))
            final = ctx.relay_and_wait(
                "cyclic_train", payload.with_headers({"round": round_index}),
                order, per_hop_wait_s=self.hop_wait_s)
            dxo = final.dxo()
            if dxo is not None and final.return_code is ReturnCode.OK:
                self.params = params_from_dxo(dxo)
            ctx.audit("round_completed", f"round={round_index}")
            self.start_round = round_index + 1
            ctx.save_snapshot(self.get_state())
        _, _, x_test, y_test = make_dataset(**self.dataset_args)
        accuracy, loss = evaluate(self.params, x_test, y_test)
        ctx.log_metric({"round": self.rounds - 1, "accuracy": accuracy,
                        "loss": loss})
        return {"model": blob_to_b64(_params_dxo_bytes(
                    params_to_dxo(self.params))),
                "metrics": [{"round": self.rounds - 1, "accuracy": accuracy,
                             "loss": loss}]}

    def get_state(self) -> dict:
        return {"round": self.start_round,
                "params": blob_to_b64(_params_dxo_bytes(
                    params_to_dxo(self.params)))}

    def restore_state(self, state: dict) -> None:
        from ..core.dxo import dxo_decode
        self.start_round = int(state["round"])
        self.params = params_from_dxo(dxo_decode(blob_from_b64(state["params"])))


class IdentityExecutor(Executor):
    """Echoes the task payload; test plumbing."""

    def __init__(self, args: dict, site_ctx: dict):
        super().__init__(f"identity@{site_ctx.get('site', '?')}")

    def execute(self, task_name, shareable, ctx, abort):
        return Shareable(headers=dict(shareable.headers),
                         payload=shareable.payload)


class IncrementExecutor(Executor):
    """Adds one to a counter tensor; relay arithmetic oracle."""

    def __init__(self, args: dict, site_ctx: dict):
        super().__init__(f"increment@{site_ctx.get('site', '?')}")

    def execute(self, task_name, shareable, ctx, abort):
        dxo = shareable.dxo()
        counter = np.asarray(dxo.data.get("counter", np.zeros(1)))
        out = Dxo(DxoKind.METRICS, data={"counter": counter + 1.0})
        return Shareable.from_dxo(out, headers=dict(shareable.headers))


class FailingExecutor(Executor):
    """Always raises; fault-injection plumbing."""

    def __init__(self, args: dict, site_ctx: dict):
        super().__init__("failing")

    def execute(self, task_name, shareable, ctx, abort):
        raise RuntimeError("injected failure")


def register() -> None:
    from ..registry import register_executor, register_workflow
    register_workflow("scatter_and_gather", ScatterAndGather)
    register_workflow("cyclic", CyclicController)
    register_executor("train_executor", TrainExecutor)
    register_executor("identity_executor", IdentityExecutor)
    register_executor("increment_executor", IncrementExecutor)
    register_executor("failing_executor", FailingExecutor)
