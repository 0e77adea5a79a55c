from .clock import ManualClock, SystemClock
from .context import ABSENT, FLContext, Scope
from .dxo import (DecodeError, Dxo, DxoKind, EncodeError, as_tensor,
                  dxo_decode, dxo_encode, max_payload_bytes)
from .events import Event, EventBus, EventType, FLComponent, utc_millis
from .rng import SplitMix64, derive_seed
from .shareable import ReturnCode, Shareable

__all__ = [
    "ABSENT", "DecodeError", "Dxo", "DxoKind", "EncodeError", "Event",
    "EventBus", "EventType", "FLComponent", "FLContext", "ManualClock",
    "ReturnCode", "Scope", "Shareable", "SplitMix64", "SystemClock",
    "as_tensor", "derive_seed", "dxo_decode", "dxo_encode",
    "max_payload_bytes", "utc_millis",
]
