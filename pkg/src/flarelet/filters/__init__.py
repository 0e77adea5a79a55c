from .base import (Filter, FilterConfigError, FilterSpec, FilterVeto,
                   TASK_DATA, TASK_RESULT, apply_chain)
from .privacy import (ExcludeVarsFilter, PercentilePrivacyFilter,
                      SvtPrivacyFilter, exclude_vars, nearest_rank_index,
                      percentile_privacy, svt_privacy)

_FILTER_TYPES = {
    "exclude_vars": ExcludeVarsFilter,
    "percentile_privacy": PercentilePrivacyFilter,
    "svt_privacy": SvtPrivacyFilter,
}


def build_filter(spec: FilterSpec) -> Filter:
    """Instantiate a filter from its spec; FilterConfigError on bad type/params."""
    cls = _FILTER_TYPES.get(spec.type)
    if cls is None:
        raise FilterConfigError(f"unknown filter type {spec.type!r}")
    try:
        return cls(**spec.params)
    except TypeError as exc:
        raise FilterConfigError(f"bad params for {spec.type}: {exc}")


__all__ = [
    "ExcludeVarsFilter", "Filter", "FilterConfigError", "FilterSpec",
    "FilterVeto", "PercentilePrivacyFilter", "SvtPrivacyFilter", "TASK_DATA",
    "TASK_RESULT", "apply_chain", "build_filter", "exclude_vars",
    "nearest_rank_index", "percentile_privacy", "svt_privacy",
]
