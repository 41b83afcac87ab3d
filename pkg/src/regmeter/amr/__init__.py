"""Automatic meter reading: telemetry frame codec and head-end collector."""

from .frame import (FRAME_LEN, MeterFrame, FrameError, BadMagic, UnsupportedVersion,
                    ShortFrame, LongFrame, CrcMismatch, FieldOutOfRange,
                    crc16, encode, decode, pack_stream)
from .collector import Collector, CollectorError, CollectorRecord, send_frames

__all__ = [
    "FRAME_LEN", "MeterFrame", "FrameError", "BadMagic", "UnsupportedVersion", "ShortFrame",
    "LongFrame", "CrcMismatch", "FieldOutOfRange", "crc16", "encode", "decode", "pack_stream",
    "Collector", "CollectorError", "CollectorRecord", "send_frames",
]
