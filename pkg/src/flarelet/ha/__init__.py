from .overseer import (ACTIVE, DEAD, HEARTBEAT_INTERVAL_S, MISSED_BEATS_DEAD,
                       Overseer, OverseerServer, STANDBY)

__all__ = ["ACTIVE", "DEAD", "HEARTBEAT_INTERVAL_S", "MISSED_BEATS_DEAD",
           "Overseer", "OverseerServer", "STANDBY"]
