"""Bit-exact 44-byte meter telemetry frame.

Layout (big-endian)::

    off  size  field
      0     2  magic 0x53 0x4D ("SM")
      2     1  version (0x01)
      3     4  meter_id          u32
      7     8  timestamp         u64 seconds
     15     4  v_rms             u32 mV
     19     4  i_rms             u32 mA
     23     4  p                 u32 mW
     27     4  s                 u32 mVA
     31     2  pf_scaled         u16 PF x 10^4, <= 10000
     33     8  energy            u64 mWh
     41     1  dr_flag           u8 0 normal / 1 warning / 2 crossed
     42     2  crc16 over bytes 0..41 (CCITT-FALSE)
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import asdict, dataclass, fields

from ..errors import MeterError

MAGIC = b"SM"
VERSION = 1
FRAME_LEN = 44
PF_SCALE = 10_000
PF_OFFSET = 31

_BODY = struct.Struct(">2sBIQIIIIHQB")
_CRC = struct.Struct(">H")
_LEN_PREFIX = struct.Struct(">H")

_LIMITS = {
    "meter_id": 2**32 - 1, "timestamp": 2**64 - 1, "v_rms": 2**32 - 1, "i_rms": 2**32 - 1,
    "p": 2**32 - 1, "s": 2**32 - 1, "pf_scaled": PF_SCALE, "energy": 2**64 - 1, "dr_flag": 2,
}


class FrameError(MeterError):
    code = "frame-error"

    def __str__(self):
        detail = super().__str__()
        return f"{self.code}: {detail}" if detail else self.code


class BadMagic(FrameError):
    code = "bad-magic"


class UnsupportedVersion(FrameError):
    code = "unsupported-version"


class ShortFrame(FrameError):
    code = "short-frame"


class LongFrame(FrameError):
    code = "long-frame"


class CrcMismatch(FrameError):
    code = "crc-mismatch"


class FieldOutOfRange(FrameError):
    code = "field-out-of-range"


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    return binascii.crc_hqx(bytes(data), 0xFFFF)


@dataclass(frozen=True)
class MeterFrame:
    meter_id: int
    timestamp: int
    v_rms: int  # mV
    i_rms: int  # mA
    p: int  # mW
    s: int  # mVA
    pf_scaled: int
    energy: int  # mWh
    dr_flag: int = 0

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise FieldOutOfRange(f"{f.name} must be an integer, got {value!r}")
            if not 0 <= value <= _LIMITS[f.name]:
                raise FieldOutOfRange(f"{f.name}={value} outside [0, {_LIMITS[f.name]}]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_readings(cls, meter_id: int, timestamp: int, v_rms: float, i_rms: float,
                      p: float, s: float, pf: float | None, energy_wh: float,
                      dr_flag: int = 0) -> "MeterFrame":
        """Scale SI readings to the frame's fixed-point units.

        Negative active power is sent as 0; an undefined PF as 0.
        """
        def milli(x):
            return max(0, round(x * 1000))

        return cls(meter_id=meter_id, timestamp=int(timestamp), v_rms=milli(v_rms),
                   i_rms=milli(i_rms), p=milli(p), s=milli(s),
                   pf_scaled=0 if pf is None else min(PF_SCALE, max(0, round(pf * PF_SCALE))),
                   energy=milli(energy_wh), dr_flag=int(dr_flag))


def encode(frame: MeterFrame) -> bytes:
    frame.validate()
    body = _BODY.pack(MAGIC, VERSION, frame.meter_id, frame.timestamp, frame.v_rms,
                      frame.i_rms, frame.p, frame.s, frame.pf_scaled, frame.energy,
                      frame.dr_flag)
    return body + _CRC.pack(crc16(body))


def decode(data: bytes) -> MeterFrame:
    """Parse and validate one frame; raises a :class:`FrameError` subclass."""
    data = bytes(data)
    if len(data) < FRAME_LEN:
        raise ShortFrame(f"{len(data)} bytes, need {FRAME_LEN}")
    if len(data) > FRAME_LEN:
        raise LongFrame(f"{len(data)} bytes, need {FRAME_LEN}")
    if data[:2] != MAGIC:
        raise BadMagic(data[:2].hex())
    body, (crc,) = data[:-2], _CRC.unpack(data[-2:])
    if crc16(body) != crc:
        raise CrcMismatch(f"expected {crc16(body):#06x}, got {crc:#06x}")
    _, version, *values = _BODY.unpack(body)
    if version != VERSION:
        raise UnsupportedVersion(str(version))
    frame = MeterFrame(*values)
    frame.validate()
    return frame


def pack_stream(payload: bytes) -> bytes:
    """Prefix a frame with its 2-byte big-endian length for stream transport."""
    return _LEN_PREFIX.pack(len(payload)) + payload
