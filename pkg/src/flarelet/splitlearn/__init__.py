from .model import (FeatureParty, LabelParty, ProtocolStateError,
                    centralized_reference, composed_params, split_params)
from .protocol import (SplitConfig, SplitResult, planned_step_count,
                       run_feature_side, run_label_side, run_relay,
                       run_split_session, stream_step_count)
from .psi import (GROUP_PRIME, PsiInitiator, PsiKey, PsiResponder,
                  psi_intersect)

__all__ = [
    "FeatureParty", "GROUP_PRIME", "LabelParty", "ProtocolStateError",
    "PsiInitiator", "PsiKey", "PsiResponder", "SplitConfig", "SplitResult",
    "centralized_reference", "composed_params", "planned_step_count",
    "psi_intersect", "run_feature_side", "run_label_side", "run_relay",
    "run_split_session", "split_params", "stream_step_count",
]
