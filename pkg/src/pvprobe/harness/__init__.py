from .agent import (
    AgentServer, AgentTarget, ShortFrame, UnknownOpcode, decode_frame, encode_frame, read_frame,
    serve_stream,
)
from .guarded import (
    FaultKind, FaultReport, FrameTooLarge, GuardedBuffer, TargetFault, Watchdog,
    checked_div, checked_read, checked_sub, checked_write, guarded_load,
)
from .target import DeliveryResult, Outcome, SyscallError, Target, TargetUnreachable

__all__ = [
    "AgentServer", "AgentTarget", "ShortFrame", "UnknownOpcode", "decode_frame", "encode_frame",
    "read_frame", "serve_stream", "FaultKind", "FaultReport", "FrameTooLarge", "GuardedBuffer",
    "TargetFault", "Watchdog", "checked_div", "checked_read", "checked_sub", "checked_write",
    "guarded_load", "DeliveryResult", "Outcome", "SyscallError", "Target", "TargetUnreachable",
]
