"""Local training variants and server-side aggregation math.

Implements the client update for plain weighted averaging, the proximal-term
variant, and the control-variate variant, plus the server-side momentum
update and control update.  All math is float64 and seeded, so the reduction
identities (mu=0, beta=0/lr=1, zero controls) hold bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import (PARAM_KEYS, TrainingError, copy_params, loss_and_grads,
                    params_sub, zeros_like_params)

FEDAVG = "FEDAVG"
FEDPROX = "FEDPROX"
SCAFFOLD = "SCAFFOLD"


@dataclass
class TrainConfig:
    num_rounds: int = 10
    local_epochs: int = 1
    local_steps: int = 0  # when > 0, overrides epochs
    batch_size: int = 64
    client_lr: float = 0.05
    fedprox_mu: float = 0.0
    server_lr: float = 1.0
    server_momentum: float = 0.0
    min_clients: int = 1
    seed: int = 0
    variant: str = FEDAVG
    hidden: int = 64
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size <= 0 or self.client_lr <= 0 or self.server_lr <= 0:
            raise ValueError("batch size and learning rates must be positive")
        if self.fedprox_mu < 0:
            raise ValueError("proximal mu must be >= 0")
        if not 0 <= self.server_momentum < 1:
            raise ValueError("server momentum must be in [0, 1)")
        if self.variant not in (FEDAVG, FEDPROX, SCAFFOLD):
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in raw.items() if k in known}
        return cls(**kwargs)


def _batch_stream(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Consecutive batches of a reshuffled index stream, `steps` of them."""
    produced = 0
    while produced < steps:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if produced >= steps:
                return
            yield order[start:start + batch_size]
            produced += 1


def local_step_count(n: int, cfg: TrainConfig) -> int:
    if cfg.local_steps > 0:
        return cfg.local_steps
    per_epoch = int(np.ceil(n / cfg.batch_size))
    return per_epoch * cfg.local_epochs


def local_train(global_params: dict, x: np.ndarray, y: np.ndarray,
                cfg: TrainConfig, rng: np.random.Generator,
                variant: Optional[str] = None,
                control_local: Optional[dict] = None,
                control_global: Optional[dict] = None):
    """Run K local SGD steps from the global model.

    Returns (delta_params, n_samples, delta_control) where delta_control is
    None unless the control-variate variant ran.  Raises TrainingError on
    non-finite gradients.
    """
    if x.shape[0] == 0:
        raise TrainingError("empty shard")
    variant = variant or cfg.variant
    params = copy_params(global_params)
    steps = local_step_count(x.shape[0], cfg)
    lr = cfg.client_lr

    if variant == SCAFFOLD:
        control_local = control_local or zeros_like_params(params)
        control_global = control_global or zeros_like_params(params)

    for batch in _batch_stream(x.shape[0], cfg.batch_size, steps, rng):
        _, grads = loss_and_grads(params, x[batch], y[batch])
        for key in PARAM_KEYS:
            grad = grads[key]
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite gradient in {key}")
            if variant == FEDPROX and cfg.fedprox_mu > 0.0:
                grad = grad + cfg.fedprox_mu * (params[key] - global_params[key])
            if variant == SCAFFOLD:
                grad = grad - control_local[key] + control_global[key]
            params[key] = params[key] - lr * grad

    delta = params_sub(params, global_params)
    delta_control = None
    if variant == SCAFFOLD:
        # c_i+ = c_i - c + (w_global - y) / (K * lr); report the change
        new_control = {
            key: control_local[key] - control_global[key]
            - delta[key] / (steps * lr)
            for key in PARAM_KEYS
        }
        delta_control = params_sub(new_control, control_local)
    return delta, x.shape[0], delta_control


def aggregate_weighted(results: dict,
                       audit: Optional[Callable[[str, str], None]] = None):
    """Sample-weighted average of client deltas.

    ``results`` maps client name -> (delta_params, n_samples).  Mismatched or
    non-finite contributions are dropped (and audited); the aggregate uses
    the rest.  Clients are folded in name order so the float math is
    reproducible regardless of arrival order.
    """
    accepted = {}
    reference = None
    for client in sorted(results):
        delta, n = results[client]
        if reference is None:
            reference = {k: v.shape for k, v in delta.items()}
        shapes = {k: v.shape for k, v in delta.items()}
        if shapes != reference:
            if audit:
                audit("aggregation_rejected", f"{client}: shape mismatch")
            continue
        if not all(np.all(np.isfinite(v)) for v in delta.values()):
            if audit:
                audit("aggregation_rejected", f"{client}: non-finite delta")
            continue
        if n <= 0:
            if audit:
                audit("aggregation_rejected", f"{client}: non-positive weight")
            continue
        accepted[client] = (delta, n)
    if not accepted:
        raise TrainingError("no valid contributions to aggregate")

    total = float(sum(n for _, n in accepted.values()))
    first = next(iter(accepted.values()))[0]
    out = {k: np.zeros_like(v) for k, v in first.items()}
    for client in sorted(accepted):
        delta, n = accepted[client]
        weight = n / total
        for key in out:
            out[key] = out[key] + weight * delta[key]
    return out, sorted(accepted)


def server_update(params: dict, delta: dict, cfg: TrainConfig,
                  momentum: Optional[dict] = None):
    """Server optimizer: momentum buffer update then step.

    With beta=0 and server_lr=1 this reduces exactly to adding the delta.
    Returns (new_params, new_momentum).
    """
    beta = cfg.server_momentum
    momentum = momentum or zeros_like_params(params)
    new_momentum = {k: beta * momentum[k] + delta[k] for k in params}
    new_params = {k: params[k] + cfg.server_lr * new_momentum[k] for k in params}
    return new_params, new_momentum


def scaffold_server_update(control: dict, control_deltas: list,
                           participating: int, total_clients: int) -> dict:
    """c <- c + (|S| / N) * mean_i(delta_c_i)."""
    if not control_deltas:
        return control
    mean = {k: np.zeros_like(v) for k, v in control.items()}
    for delta in control_deltas:
        for key in mean:
            mean[key] = mean[key] + delta[key]
    scale = (participating / total_clients) / len(control_deltas)
    return {k: control[k] + scale * mean[k] for k in control}
