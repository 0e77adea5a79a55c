from .connection import (AuthError, ConnectError, Connection, PeerClosed,
                         RecvTimeout, TransportError)
from .driver import (DriverEndpoint, driver_connect_raw, driver_listen,
                     parse_endpoint)
from .frame import (Frame, FrameError, MsgType, PREFIX_LEN, decode_frame,
                    encode_frame)
from .inproc import InprocListener, inproc_connect, inproc_pair
from .tcp import TcpListener, tcp_connect

__all__ = [
    "AuthError", "ConnectError", "Connection", "DriverEndpoint", "Frame",
    "FrameError", "InprocListener", "MsgType", "PREFIX_LEN", "PeerClosed",
    "RecvTimeout", "TcpListener", "TransportError", "decode_frame",
    "driver_connect_raw", "driver_listen", "encode_frame", "inproc_connect",
    "inproc_pair", "parse_endpoint", "tcp_connect",
]
