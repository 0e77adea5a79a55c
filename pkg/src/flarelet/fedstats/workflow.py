"""Two-phase statistics as a server workflow plus the client executor."""

from __future__ import annotations

import numpy as np

from ..client.executor import AbortSignal, Executor
from ..core.context import FLContext
from ..core.dxo import Dxo, DxoKind
from ..core.rng import derive_seed
from ..core.shareable import ReturnCode, Shareable
from ..server.controller import ControllerContext, Workflow
from .csvio import load_csv_columns
from .protocol import moments_to_summary
from .stats import (REFUSED, StatsError, StatsPrivacyPolicy, local_histogram,
                    local_moments, merge_histograms, merge_moments)

PHASE1_TASK = "stats_phase1"
PHASE2_TASK = "stats_phase2"


def _moments_to_dxo(per_dataset: dict) -> Dxo:
    children = {}
    for ds_name, stats in per_dataset.items():
        data = {}
        for feature, moments in stats.items():
            if moments is None:
                continue
            data[feature] = np.array([moments["count"], moments["sum"],
                                      moments["sum_sq"], moments["min"],
                                      moments["max"]], dtype=np.float64)
        children[ds_name] = Dxo(DxoKind.STATISTICS, data=data)
    return Dxo(DxoKind.COLLECTION, data=children)


def _moments_from_dxo(dxo: Dxo) -> dict:
    out = {}
    for ds_name, child in dxo.data.items():
        stats = {}
        for feature, vec in child.data.items():
            vec = np.asarray(vec)
            stats[feature] = {"count": int(vec[0]), "sum": float(vec[1]),
                              "sum_sq": float(vec[2]), "min": float(vec[3]),
                              "max": float(vec[4])}
        out[ds_name] = stats
    return out


class StatsExecutor(Executor):
    """Computes local statistics for this site's datasets.

    Data comes either from CSV paths (``{site}`` templating supported) or a
    seeded synthetic spec, so the same job runs everywhere.  The privacy
    policy is the site's own, from the client config, falling back to job
    args.
    """

    def __init__(self, args: dict, site_ctx: dict):
        super().__init__(f"stats@{site_ctx.get('site', '?')}")
        self.site = site_ctx.get("site", "site")
        self.args = args
        privacy = site_ctx.get("privacy", {}).get("stats") or args.get("policy", {})
        self.policy = StatsPrivacyPolicy.from_dict(privacy)
        self._datasets = None

    def _load(self) -> dict:
        if self._datasets is not None:
            return self._datasets
        datasets = {}
        for ds_name, path in self.args.get("csv", {}).items():
            datasets[ds_name] = load_csv_columns(path.format(site=self.site))
        synthetic = dict(self.args.get("synthetic", {}))
        overrides = self.args.get("site_overrides", {}).get(self.site)
        if overrides:
            synthetic.update(overrides)
        for ds_name, feature_specs in synthetic.items():
            rng = np.random.default_rng(
                derive_seed(self.args.get("seed", 0), self.site, ds_name))
            datasets[ds_name] = {
                feature: rng.normal(spec.get("mu", 0.0),
                                    spec.get("sigma", 1.0),
                                    int(spec.get("n", 100)))
                for feature, spec in feature_specs.items()}
        self._datasets = datasets
        return datasets

    def execute(self, task_name: str, shareable: Shareable, ctx: FLContext,
                abort: AbortSignal) -> Shareable:
        request = shareable.dxo()
        features = [f for f in request.meta.get("features", "").split(",") if f]
        datasets = self._load()
        refused = []
        if task_name == PHASE1_TASK:
            per_dataset = {}
            for ds_name, dataset in datasets.items():
                stats = local_moments(dataset, features, self.policy,
                                      site=self.site, dataset_name=ds_name)
                if stats == REFUSED:
                    refused.append(ds_name)
                else:
                    per_dataset[ds_name] = stats
            out = _moments_to_dxo(per_dataset)
        else:
            bins = int(request.meta.get("bins", 10))
            per_dataset = {}
            for ds_name, child in request.data.items():
                if ds_name not in datasets:
                    continue
                ranges = {feature: (float(v[0]), float(v[1]))
                          for feature, v in child.data.items()}
                hists = local_histogram(datasets[ds_name], features, ranges,
                                        bins)
                data = {feature: entry["counts"]
                        for feature, entry in hists.items() if entry}
                per_dataset[ds_name] = Dxo(DxoKind.STATISTICS, data=data)
            out = Dxo(DxoKind.COLLECTION, data=per_dataset)
        if refused:
            out.meta["refused"] = ",".join(sorted(refused))
        return Shareable.from_dxo(out, headers=dict(shareable.headers))


class StatsController(Workflow):
    def __init__(self, args: dict):
        super().__init__("fedstats")
        self.features = list(args.get("features", []))
        self.bins = int(args.get("bins", 10))
        self.wait_s = float(args.get("round_wait_s", 60.0))
        if not self.features:
            raise StatsError("stats workflow needs a feature list")

    def run(self, ctx: ControllerContext) -> dict:
        clients = ctx.live_clients()
        request = Shareable.from_dxo(
            Dxo(DxoKind.STATISTICS, meta={"features": ",".join(self.features)}))
        replies = ctx.broadcast_and_wait(PHASE1_TASK, request, self.wait_s,
                                         min_responses=len(clients))

        phase1: dict = {}
        abstained: dict = {}
        for site in sorted(replies):
            reply = replies[site]
            if reply.return_code is not ReturnCode.OK:
                continue
            dxo = reply.dxo()
            for ds_name in (dxo.meta.get("refused") or "").split(","):
                if ds_name:
                    abstained.setdefault(ds_name, []).append(site)
            for ds_name, stats in _moments_from_dxo(dxo).items():
                phase1.setdefault(ds_name, {})[site] = stats
        if not phase1:
            raise StatsError("every client abstained")

        ranges = {}
        for ds_name, per_site in phase1.items():
            ranges[ds_name] = {}
            for feature in self.features:
                merged = merge_moments(per_site, feature)
                if merged is not None:
                    ranges[ds_name][feature] = (merged["min"], merged["max"])

        range_children = {
            ds_name: Dxo(DxoKind.STATISTICS, data={
                feature: np.array(pair, dtype=np.float64)
                for feature, pair in per_feature.items()})
            for ds_name, per_feature in ranges.items()}
        phase2_req = Shareable.from_dxo(Dxo(
            DxoKind.COLLECTION, data=range_children,
            meta={"features": ",".join(self.features), "bins": self.bins}))
        replies2 = ctx.broadcast_and_wait(PHASE2_TASK, phase2_req, self.wait_s,
                                          min_responses=len(clients))

        phase2: dict = {}
        for site in sorted(replies2):
            reply = replies2[site]
            if reply.return_code is not ReturnCode.OK:
                continue
            dxo = reply.dxo()
            for ds_name, child in dxo.data.items():
                if site not in phase1.get(ds_name, {}):
                    continue
                hists = {}
                for feature, counts in child.data.items():
                    lo, hi = ranges[ds_name][feature]
                    hists[feature] = {
                        "counts": np.asarray(counts, dtype=np.int64),
                        "edges": np.linspace(lo, hi, self.bins + 1)}
                phase2.setdefault(ds_name, {})[site] = hists

        result = {"datasets": {}, "abstained": {k: sorted(v) for k, v in
                                                abstained.items()}}
        for ds_name, per_site in phase1.items():
            ds_out = {}
            for feature in self.features:
                merged = merge_moments(per_site, feature)
                if merged is None:
                    continue
                hist = merge_histograms(phase2.get(ds_name, {}), feature)
                entry = {"global": {**merged, "histogram": {
                             "counts": hist["counts"].tolist(),
                             "edges": hist["edges"].tolist()} if hist else None},
                         "clients": {}}
                for site, stats in sorted(per_site.items()):
                    summary = moments_to_summary(stats.get(feature))
                    if summary is not None:
                        entry["clients"][site] = summary
                ds_out[feature] = entry
            result["datasets"][ds_name] = ds_out
        ctx.audit("round_completed", "stats complete")
        ctx.log_metric({"round": 0, "accuracy": 0.0, "loss": 0.0})
        return result


def register() -> None:
    from ..registry import register_executor, register_workflow
    register_workflow("fedstats", StatsController)
    register_executor("stats_executor", StatsExecutor)
