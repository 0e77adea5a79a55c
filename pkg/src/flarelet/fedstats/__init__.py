from .csvio import load_csv_columns, write_csv
from .protocol import run_stats_protocol
from .stats import (REFUSED, StatsError, StatsPrivacyPolicy, feature_moments,
                    local_histogram, local_moments, merge_histograms,
                    merge_moments, pooled_reference)

__all__ = [
    "REFUSED", "StatsError", "StatsPrivacyPolicy", "feature_moments",
    "load_csv_columns", "local_histogram", "local_moments",
    "merge_histograms", "merge_moments", "pooled_reference",
    "run_stats_protocol", "write_csv",
]
