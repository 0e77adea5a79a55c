"""Per-feature statistics: local moments, privacy gate, and global merge.

Phase 1 collects {count, sum, sum of squares, min, max} per feature; the
server fixes a global range from those extremes; phase 2 collects histograms
over that shared range so bins line up across clients and merge by addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core.rng import SplitMix64, derive_seed

REFUSED = "REFUSED"


class StatsError(ValueError):
    pass


@dataclass
class StatsPrivacyPolicy:
    min_count: int = 0
    jitter: float = 0.0  # multiplicative, directional; [0, 0.1]
    seed: int = 0
    allowed: tuple = ("count", "sum", "sum_sq", "min", "max", "histogram")

    def __post_init__(self):
        if not 0 <= self.jitter <= 0.1:
            raise StatsError("jitter factor must be in [0, 0.1]")
        if self.min_count < 0:
            raise StatsError("min_count must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "StatsPrivacyPolicy":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in raw.items() if k in known}
        if "allowed" in kwargs:
            kwargs["allowed"] = tuple(kwargs["allowed"])
        return cls(**kwargs)


def feature_moments(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"count": 0, "sum": 0.0, "sum_sq": 0.0, "min": math.inf,
                "max": -math.inf}
    return {
        "count": int(values.size),
        "sum": float(values.sum()),
        "sum_sq": float(np.sum(values * values)),
        "min": float(values.min()),
        "max": float(values.max()),
    }


def local_moments(dataset: dict, features, policy: StatsPrivacyPolicy,
                  site: str = "", dataset_name: str = ""):
    """Phase-1 stats for one dataset, or REFUSED when the policy bars it.

    Missing features appear with a None entry rather than failing the call.
    """
    out = {}
    counts = []
    for feature in features:
        if feature not in dataset:
            out[feature] = None
            continue
        moments = feature_moments(dataset[feature])
        counts.append(moments["count"])
        out[feature] = moments
    if policy.min_count > 0:
        if not counts or min(counts) < policy.min_count:
            return REFUSED
    if policy.jitter > 0.0:
        rng = SplitMix64(derive_seed(policy.seed, site, dataset_name))
        for feature, moments in out.items():
            if moments is None or moments["count"] == 0:
                continue
            down = rng.uniform() * policy.jitter
            up = rng.uniform() * policy.jitter
            moments["min"] -= abs(moments["min"]) * down
            moments["max"] += abs(moments["max"]) * up
    return out


def local_histogram(dataset: dict, features, ranges: dict, bins: int):
    """Phase-2 equal-width histograms over the server-provided global range."""
    out = {}
    for feature in features:
        if feature not in dataset or feature not in ranges:
            out[feature] = None
            continue
        lo, hi = ranges[feature]
        if not hi > lo:
            hi = lo + 1.0  # degenerate range: single-point feature
        values = np.asarray(dataset[feature], dtype=np.float64)
        counts, edges = np.histogram(values[np.isfinite(values)], bins=bins,
                                     range=(lo, hi))
        out[feature] = {"counts": counts.astype(np.int64),
                        "edges": edges.astype(np.float64)}
    return out


def merge_moments(per_client: dict, feature: str) -> Optional[dict]:
    """Pool phase-1 moments across clients for one feature."""
    totals = {"count": 0, "sum": 0.0, "sum_sq": 0.0,
              "min": math.inf, "max": -math.inf}
    for stats in per_client.values():
        moments = stats.get(feature)
        if moments is None or moments["count"] == 0:
            continue
        totals["count"] += moments["count"]
        totals["sum"] += moments["sum"]
        totals["sum_sq"] += moments["sum_sq"]
        totals["min"] = min(totals["min"], moments["min"])
        totals["max"] = max(totals["max"], moments["max"])
    if totals["count"] == 0:
        return None
    n = totals["count"]
    mean = totals["sum"] / n
    variance = max(0.0, totals["sum_sq"] / n - mean * mean)
    return {"count": n, "mean": mean, "std": math.sqrt(variance),
            "min": totals["min"], "max": totals["max"]}


def merge_histograms(per_client: dict, feature: str) -> Optional[dict]:
    merged = None
    for hists in per_client.values():
        entry = (hists or {}).get(feature)
        if entry is None:
            continue
        if merged is None:
            merged = {"counts": entry["counts"].copy(),
                      "edges": entry["edges"].copy()}
        else:
            merged["counts"] = merged["counts"] + entry["counts"]
    return merged


def pooled_reference(arrays, bins: int) -> dict:
    """Oracle: statistics of the concatenated raw data."""
    pooled = np.concatenate([np.asarray(a, dtype=np.float64) for a in arrays])
    moments = feature_moments(pooled)
    n = moments["count"]
    mean = moments["sum"] / n
    variance = max(0.0, moments["sum_sq"] / n - mean * mean)
    counts, edges = np.histogram(pooled, bins=bins,
                                 range=(moments["min"], moments["max"]))
    return {"count": n, "mean": mean, "std": math.sqrt(variance),
            "min": moments["min"], "max": moments["max"],
            "histogram": {"counts": counts, "edges": edges}}
