import math

import numpy as np
import pytest

from flarelet.core import Dxo, DxoKind, FLContext, ReturnCode, Shareable
from flarelet.filters import (ExcludeVarsFilter, FilterConfigError, FilterSpec,
                              FilterVeto, SvtPrivacyFilter, apply_chain,
                              build_filter, exclude_vars, percentile_privacy,
                              svt_privacy)
from flarelet.filters.base import Filter


def diff_shareable(*arrays, names=None):
    names = names or [f"t{i}" for i in range(len(arrays))]
    data = {name: np.asarray(arr, dtype=np.float64)
            for name, arr in zip(names, arrays)}
    return Shareable.from_dxo(Dxo(DxoKind.WEIGHT_DIFF, data=data))


def flat_payload(shareable):
    dxo = shareable.dxo()
    parts = [np.asarray(v).ravel() for v in dxo.data.values()]
    return np.concatenate(parts) if parts else np.zeros(0)


# ---------------------------------------------------------------------------
# exclude_vars


def test_exclude_empty_patterns_is_identity():
    sh = diff_shareable([1.0, 2.0])
    assert exclude_vars(sh, []) == sh


def test_exclude_glob_semantics():
    dxo = Dxo(DxoKind.WEIGHTS, data={"fc.w": np.ones(2), "fc.b": np.ones(1),
                                     "bn.stats": np.ones(3)})
    out = exclude_vars(Shareable.from_dxo(dxo), ["bn.*"]).dxo()
    assert list(out.data) == ["fc.w", "fc.b"]
    assert out.meta["excluded_vars"] == "bn.stats"
    # surviving tensors byte-identical
    assert out.data["fc.w"].tobytes() == dxo.data["fc.w"].tobytes()


def test_exclude_all_names_leaves_valid_empty_dxo():
    sh = diff_shareable([1.0], [2.0], names=["a", "b"])
    out = exclude_vars(sh, ["*"])
    assert out.return_code is ReturnCode.OK
    assert out.dxo().data == {}


def test_exclude_non_tensor_payload_passthrough():
    metrics = Shareable.from_dxo(Dxo(DxoKind.METRICS, meta={"acc": 0.5}))
    assert exclude_vars(metrics, ["*"]) == metrics


# ---------------------------------------------------------------------------
# percentile_privacy


def test_percentile_hand_case():
    out = percentile_privacy(diff_shareable([1.0, 2.0, 3.0, 4.0]),
                             percentile=50, gamma=math.inf)
    assert np.allclose(flat_payload(out), [1, 2, 2, 2])


def test_percentile_all_zero_unchanged():
    out = percentile_privacy(diff_shareable([0.0, 0.0, 0.0]), 50, 10.0)
    assert np.allclose(flat_payload(out), [0, 0, 0])


def test_percentile_gamma_before_cutoff():
    out = percentile_privacy(diff_shareable([1.0, 2.0, 3.0, 100.0]),
                             percentile=100, gamma=10.0)
    assert np.allclose(flat_payload(out), [1, 2, 3, 0])


def test_percentile_empty_payload_identity():
    sh = Shareable.from_dxo(Dxo(DxoKind.WEIGHT_DIFF))
    assert percentile_privacy(sh, 50, 1.0) == sh


def test_percentile_output_bounded_by_cutoff():
    rng = np.random.default_rng(3)
    for _ in range(50):
        values = rng.normal(0, 5, size=rng.integers(1, 40))
        gamma = float(rng.uniform(0.5, 8.0))
        p = float(rng.uniform(1, 100))
        out = flat_payload(percentile_privacy(diff_shareable(values), p, gamma))
        # oracle: recompute the cutoff the slow way
        mod = np.where(np.abs(values) > gamma, 0.0, values)
        cut = np.sort(np.abs(mod))[min(max(math.ceil(p / 100 * mod.size), 1),
                                       mod.size) - 1]
        assert np.all(np.abs(out) <= cut + 1e-15)


def test_percentile_splits_multiple_tensors():
    out = percentile_privacy(diff_shareable([1.0, 2.0], [3.0, 4.0]),
                             percentile=50, gamma=math.inf)
    dxo = out.dxo()
    assert np.allclose(dxo.data["t0"], [1, 2])
    assert np.allclose(dxo.data["t1"], [2, 2])


# ---------------------------------------------------------------------------
# svt_privacy


def test_svt_zero_input_zero_output():
    out = svt_privacy(diff_shareable(np.zeros(20)), 0.5, 0.1, 0.1, 1.0, seed=1)
    assert np.allclose(flat_payload(out), 0.0)


def test_svt_noise_free_selects_exact_top_q():
    rng = np.random.default_rng(11)
    for trial in range(20):
        n = 101  # q*n deliberately non-integer so the threshold is unambiguous
        values = rng.normal(0, 1, size=n)
        q = 0.3
        out = flat_payload(svt_privacy(diff_shareable(values), q, 1.0, 1.0,
                                       gamma=100.0, seed=trial, noise=False))
        budget = math.ceil(q * n)
        top = set(np.argsort(-np.abs(values))[:budget])
        assert set(np.nonzero(out)[0]) == top
        # with large gamma and no noise the released values are exact
        released = sorted(np.nonzero(out)[0])
        assert np.allclose(out[released], values[released])


def test_svt_sparsity_and_range_bounds_500_vectors():
    rng = np.random.default_rng(5)
    for trial in range(500):
        n = int(rng.integers(1, 60))
        values = rng.normal(0, 2, size=n)
        q = float(rng.uniform(0.05, 1.0))
        gamma = float(rng.uniform(0.1, 3.0))
        out = flat_payload(svt_privacy(diff_shareable(values), q, 0.5, 0.5,
                                       gamma, seed=trial))
        assert np.count_nonzero(out) <= math.ceil(q * n)
        assert np.all(np.abs(out) <= gamma + 1e-12)


def test_svt_deterministic_given_seed():
    values = np.linspace(-2, 2, 37)
    a = flat_payload(svt_privacy(diff_shareable(values), 0.4, 0.3, 0.3, 1.0, 99))
    b = flat_payload(svt_privacy(diff_shareable(values), 0.4, 0.3, 0.3, 1.0, 99))
    c = flat_payload(svt_privacy(diff_shareable(values), 0.4, 0.3, 0.3, 1.0, 98))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_svt_release_count_in_meta():
    out = svt_privacy(diff_shareable(np.ones(10)), 0.5, 1.0, 1.0, 2.0,
                      seed=0, noise=False)
    assert out.dxo().meta["svt_released"] == 5


# ---------------------------------------------------------------------------
# Spec validation and chains


def test_bad_filter_specs_rejected():
    with pytest.raises(FilterConfigError):
        build_filter(FilterSpec.from_dict({"type": "percentile_privacy",
                                           "params": {"percentile": 0}}))
    with pytest.raises(FilterConfigError):
        build_filter(FilterSpec.from_dict({"type": "svt_privacy",
                                           "params": {"fraction": 1.5}}))
    with pytest.raises(FilterConfigError):
        build_filter(FilterSpec.from_dict({"type": "nope", "params": {}}))
    with pytest.raises(FilterConfigError):
        FilterSpec.from_dict({"type": "exclude_vars", "direction": "SIDEWAYS"})


class _Veto(Filter):
    def process(self, shareable, ctx):
        raise FilterVeto("policy says no")


class _Mark(Filter):
    def __init__(self, tag):
        super().__init__(f"mark-{tag}")
        self.tag = tag

    def process(self, shareable, ctx):
        return shareable.with_headers({f"mark_{self.tag}": "1"})


def test_chain_applies_in_order_and_veto_blocks():
    ctx = FLContext()
    sh = diff_shareable([1.0])
    out = apply_chain([_Mark("a"), _Mark("b")], sh, ctx)
    assert out.headers["mark_a"] == "1" and out.headers["mark_b"] == "1"

    audits = []
    out = apply_chain([_Mark("a"), _Veto("veto"), _Mark("c")], sh, ctx,
                      audit=lambda a, d: audits.append(a))
    assert out.return_code is ReturnCode.FILTER_BLOCKED
    assert "mark_c" not in out.headers
    assert audits == ["filter_blocked"]
