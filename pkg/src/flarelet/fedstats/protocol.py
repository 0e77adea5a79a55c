"""Two-phase statistics orchestration, independent of the transport.

The engine workflow broadcasts these same steps as tasks; tests and the
simulator can call this pure version directly on in-memory data.
"""

from __future__ import annotations

import math
from typing import Optional

from .stats import (REFUSED, StatsError, StatsPrivacyPolicy, local_histogram,
                    local_moments, merge_histograms, merge_moments)


def moments_to_summary(moments: dict) -> Optional[dict]:
    if moments is None or moments["count"] == 0:
        return None
    n = moments["count"]
    mean = moments["sum"] / n
    variance = max(0.0, moments["sum_sq"] / n - mean * mean)
    return {"count": n, "mean": mean, "std": math.sqrt(variance),
            "min": moments["min"], "max": moments["max"]}


def run_stats_protocol(clients_data: dict, features, bins: int,
                       policies: Optional[dict] = None) -> dict:
    """Compute global statistics from per-client datasets.

    ``clients_data``: {site: {dataset: {feature: values}}}.  A site whose
    policy refuses a dataset abstains for that dataset; the output marks it.
    """
    if not clients_data:
        raise StatsError("no participating clients")
    policies = policies or {}
    features = list(features)

    # phase 1: moments
    phase1: dict = {}
    abstained: dict = {}
    for site, datasets in clients_data.items():
        policy = policies.get(site, StatsPrivacyPolicy())
        for ds_name, dataset in datasets.items():
            stats = local_moments(dataset, features, policy, site=site,
                                  dataset_name=ds_name)
            if stats == REFUSED:
                abstained.setdefault(ds_name, []).append(site)
                continue
            phase1.setdefault(ds_name, {})[site] = stats
    if not phase1:
        raise StatsError("every client abstained")

    # server fixes the global range per (dataset, feature)
    ranges: dict = {}
    for ds_name, per_site in phase1.items():
        ranges[ds_name] = {}
        for feature in features:
            merged = merge_moments(per_site, feature)
            if merged is not None:
                ranges[ds_name][feature] = (merged["min"], merged["max"])

    # phase 2: histograms over the shared ranges
    phase2: dict = {}
    for site, datasets in clients_data.items():
        for ds_name, dataset in datasets.items():
            if site not in phase1.get(ds_name, {}):
                continue  # abstainers contribute nothing in phase 2 either
            phase2.setdefault(ds_name, {})[site] = local_histogram(
                dataset, features, ranges[ds_name], bins)

    # merge
    result = {"datasets": {}, "abstained": {k: sorted(v)
                                            for k, v in abstained.items()}}
    for ds_name, per_site in phase1.items():
        ds_out: dict = {}
        for feature in features:
            merged = merge_moments(per_site, feature)
            if merged is None:
                continue
            hist = merge_histograms(phase2.get(ds_name, {}), feature)
            entry = {
                "global": {**merged, "histogram": {
                    "counts": hist["counts"].tolist(),
                    "edges": hist["edges"].tolist()} if hist else None},
                "clients": {},
            }
            for site, stats in sorted(per_site.items()):
                summary = moments_to_summary(stats.get(feature))
                if summary is not None:
                    site_hist = (phase2.get(ds_name, {}).get(site) or {}).get(feature)
                    if site_hist is not None:
                        summary["histogram"] = {
                            "counts": site_hist["counts"].tolist(),
                            "edges": site_hist["edges"].tolist()}
                    entry["clients"][site] = summary
            ds_out[feature] = entry
        result["datasets"][ds_name] = ds_out
    return result
