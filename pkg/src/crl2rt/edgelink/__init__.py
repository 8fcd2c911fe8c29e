"""Edge runtime, wire protocol, weight hot-swap and timing."""

from .codec import (
    BufferPacket,
    ChecksumError,
    FramingError,
    ProtocolError,
    WeightPacket,
    decode_buffer_packet,
    decode_weight_packet,
    encode_buffer_packet,
    encode_weight_packet,
)
from .policy import EdgePolicy, WeightReceiver, hot_swap
from .timing import STAGES, TimingRecorder, summarize

__all__ = [
    "STAGES",
    "BufferPacket",
    "ChecksumError",
    "EdgePolicy",
    "FramingError",
    "ProtocolError",
    "TimingRecorder",
    "WeightPacket",
    "WeightReceiver",
    "decode_buffer_packet",
    "decode_weight_packet",
    "encode_buffer_packet",
    "encode_weight_packet",
    "hot_swap",
    "summarize",
]
