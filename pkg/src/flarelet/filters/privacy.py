"""Privacy filters: variable exclusion, percentile truncation, sparse-vector release.

All three operate on the flattened concatenation of the payload tensors and
are deterministic given their parameters (and seed, for the sparse-vector
filter).  Noise is sampled by inverse CDF from a splitmix64 stream so results
reproduce bit-for-bit across platforms.
"""

from __future__ import annotations

import fnmatch
import logging
import math
from typing import Optional

import numpy as np

from ..core.context import FLContext
from ..core.dxo import Dxo, DxoKind
from ..core.rng import SplitMix64
from ..core.shareable import ReturnCode, Shareable
from .base import Filter, FilterConfigError

log = logging.getLogger("flarelet.filters")

_TENSOR_KINDS = (DxoKind.WEIGHTS, DxoKind.WEIGHT_DIFF)


def nearest_rank_index(n: int, percent: float) -> int:
    """0-based index of the nearest-rank percentile in an ascending sort."""
    rank = math.ceil(percent / 100.0 * n)
    return min(max(rank, 1), n) - 1


def _flatten(dxo: Dxo) -> np.ndarray:
    parts = [np.asarray(v, dtype=np.float64).ravel() for v in dxo.data.values()]
    if not parts:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(parts)


def _unflatten(dxo: Dxo, flat: np.ndarray) -> Dxo:
    out = Dxo(dxo.kind, meta=dict(dxo.meta))
    pos = 0
    for name, value in dxo.data.items():
        size = int(np.asarray(value).size)
        out.data[name] = flat[pos:pos + size].reshape(np.asarray(value).shape)
        pos += size
    return out


def exclude_vars(shareable: Shareable, patterns) -> Shareable:
    """Remove tensors whose names match any glob pattern; others untouched."""
    dxo = shareable.dxo()
    if dxo is None or dxo.kind not in _TENSOR_KINDS:
        log.warning("exclude_vars: non-tensor payload passed through")
        return shareable
    if not patterns:
        return shareable
    removed = [name for name in dxo.data
               if any(fnmatch.fnmatchcase(name, pat) for pat in patterns)]
    if not removed:
        return shareable
    out = Dxo(dxo.kind, meta=dict(dxo.meta))
    for name, value in dxo.data.items():
        if name not in removed:
            out.data[name] = value
    out.meta["excluded_vars"] = ",".join(removed)
    return Shareable.from_dxo(out, headers=dict(shareable.headers))


def percentile_privacy(shareable: Shareable, percentile: float,
                       gamma: float) -> Shareable:
    """Truncate weight differences at the nearest-rank percentile of |delta|.

    Elements whose original magnitude exceeds gamma are zeroed first; the
    cutoff is then computed over the modified vector and everything is
    clamped into [-cutoff, +cutoff].
    """
    if not 0 < percentile <= 100:
        raise FilterConfigError(f"percentile must be in (0, 100], got {percentile}")
    if not gamma > 0:
        raise FilterConfigError(f"gamma must be positive, got {gamma}")
    dxo = shareable.dxo()
    if dxo is None or dxo.kind is not DxoKind.WEIGHT_DIFF:
        log.warning("percentile_privacy: payload is not WEIGHT_DIFF, passed through")
        return shareable
    flat = _flatten(dxo)
    if flat.size == 0:
        return shareable
    flat = np.where(np.abs(flat) > gamma, 0.0, flat)
    cutoff = float(np.sort(np.abs(flat))[nearest_rank_index(flat.size, percentile)])
    flat = np.clip(flat, -cutoff, cutoff)
    out = _unflatten(dxo, flat)
    out.meta["percentile_cutoff"] = cutoff
    return Shareable.from_dxo(out, headers=dict(shareable.headers))


def svt_privacy(shareable: Shareable, fraction: float, eps1: float, eps2: float,
                gamma: float, seed: int, noise: bool = True) -> Shareable:
    """Sparse-vector release of at most ceil(fraction * n) coordinates.

    Stages: clip to [-gamma, gamma]; noisy threshold at the (1 - fraction)
    percentile; visit coordinates in a seeded random order releasing those
    whose noisy magnitude clears the noisy threshold, with fresh output noise,
    clamped back into [-gamma, gamma].  Unreleased coordinates are zero.

    ``noise=False`` disables every Laplace draw; it exists for tests probing
    the large-epsilon limit and must not be used for actual privacy.
    """
    if not 0 < fraction <= 1:
        raise FilterConfigError(f"fraction must be in (0, 1], got {fraction}")
    for name, value in (("eps1", eps1), ("eps2", eps2), ("gamma", gamma)):
        if not value > 0:
            raise FilterConfigError(f"{name} must be positive, got {value}")
    dxo = shareable.dxo()
    if dxo is None or dxo.kind is not DxoKind.WEIGHT_DIFF:
        log.warning("svt_privacy: payload is not WEIGHT_DIFF, passed through")
        return shareable
    flat = _flatten(dxo)
    n = flat.size
    if n == 0:
        return shareable
    if not np.any(flat):
        # No signal anywhere: releasing noisy zeros would only add garbage.
        out = _unflatten(dxo, np.zeros(n))
        out.meta["svt_released"] = 0
        return Shareable.from_dxo(out, headers=dict(shareable.headers))

    rng = SplitMix64(seed)
    lap = (lambda scale: rng.laplace(scale)) if noise else (lambda scale: 0.0)

    clipped = np.clip(flat, -gamma, gamma)
    magnitudes = np.abs(clipped)
    tau = float(np.sort(magnitudes)[nearest_rank_index(n, (1.0 - fraction) * 100.0)])
    rho = tau + lap(2.0 * gamma / eps1)

    budget = math.ceil(fraction * n)
    released = np.zeros(n, dtype=np.float64)
    count = 0
    for j in rng.permutation(n):
        if count >= budget:
            break
        if magnitudes[j] + lap(4.0 * gamma / eps1) >= rho:
            released[j] = min(max(flat[j] + lap(gamma / eps2), -gamma), gamma)
            count += 1

    out = _unflatten(dxo, released)
    out.meta["svt_released"] = count
    return Shareable.from_dxo(out, headers=dict(shareable.headers))


# ---------------------------------------------------------------------------
# Filter components wrapping the pure functions


class ExcludeVarsFilter(Filter):
    def __init__(self, patterns=None, component_id: str = ""):
        super().__init__(component_id or "exclude_vars")
        self.patterns = list(patterns or [])

    def process(self, shareable: Shareable, ctx: FLContext) -> Shareable:
        return exclude_vars(shareable, self.patterns)


class PercentilePrivacyFilter(Filter):
    def __init__(self, percentile: float = 50.0, gamma: float = 1.0,
                 component_id: str = ""):
        super().__init__(component_id or "percentile_privacy")
        if not 0 < percentile <= 100 or not gamma > 0:
            raise FilterConfigError("percentile in (0,100] and gamma > 0 required")
        self.percentile = percentile
        self.gamma = gamma

    def process(self, shareable: Shareable, ctx: FLContext) -> Shareable:
        return percentile_privacy(shareable, self.percentile, self.gamma)


class SvtPrivacyFilter(Filter):
    def __init__(self, fraction: float = 0.1, eps1: float = 0.1,
                 eps2: float = 0.1, gamma: float = 1e-3, seed: int = 0,
                 noise: bool = True, component_id: str = ""):
        super().__init__(component_id or "svt_privacy")
        if not 0 < fraction <= 1 or min(eps1, eps2, gamma) <= 0:
            raise FilterConfigError("fraction in (0,1] and positive eps/gamma required")
        self.fraction = fraction
        self.eps1 = eps1
        self.eps2 = eps2
        self.gamma = gamma
        self.seed = seed
        self.noise = noise

    def process(self, shareable: Shareable, ctx: FLContext) -> Shareable:
        return svt_privacy(shareable, self.fraction, self.eps1, self.eps2,
                           self.gamma, self.seed, noise=self.noise)
