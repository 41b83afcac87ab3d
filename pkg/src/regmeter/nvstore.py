"""Crash-safe cumulative energy register (EEPROM emulation).

File format, two lines::

    <watt-hours as decimal text>
    <CRC-16/CCITT-FALSE of line 1's bytes, 4 hex digits>

Writes go to a temporary file in the same directory, are fsynced, and then
renamed over the register, so a reader only ever sees a complete old or a
complete new value.
"""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

from .amr.frame import crc16
from .errors import CorruptStore, MonotonicityError, StoreError

POLICIES = ("every-window", "min-delta")


def format_record(energy: float) -> str:
    line = repr(float(energy))
    return f"{line}\n{crc16(line.encode('ascii')):04x}\n"


def parse_record(text: str) -> float:
    lines = text.split("\n")
    if len(lines) != 3 or lines[2] != "":
        raise CorruptStore("register must hold exactly two lines")
    value, crc = lines[0], lines[1]
    try:
        expected = int(crc, 16)
    except ValueError:
        raise CorruptStore(f"bad checksum field {crc!r}") from None
    if len(crc) != 4 or crc16(value.encode("ascii", "replace")) != expected:
        raise CorruptStore("checksum mismatch")
    try:
        energy = float(value)
    except ValueError:
        raise CorruptStore(f"bad energy value {value!r}") from None
    if not math.isfinite(energy) or energy < 0:
        raise CorruptStore(f"energy value {value!r} out of range")
    return energy


def atomic_write_text(path: Path, content: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(content)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    try:
        dir_fd = os.open(path.parent, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(dir_fd)
    except OSError:
        pass
    finally:
        os.close(dir_fd)


class EnergyRegister:
    """Nonvolatile energy register with an every-window or min-delta write policy.

    Under ``min-delta`` a store that moves the value by less than ``delta``
    Wh since the last physical write only updates the cache; call
    :meth:`flush` on orderly shutdown.
    """

    def __init__(self, path, policy: str = "every-window", delta: float = 0.0):
        if policy not in POLICIES:
            raise StoreError(f"policy must be one of {POLICIES}, got {policy!r}")
        if delta < 0:
            raise StoreError("delta must be >= 0")
        self.path = Path(path)
        self.policy = policy
        self.delta = float(delta)
        self.cached: float | None = None
        self.last_written: float | None = None

    def load(self) -> float:
        try:
            text = self.path.read_text(encoding="ascii")
        except FileNotFoundError:
            energy = 0.0
        except UnicodeDecodeError:
            raise CorruptStore(f"{self.path}: not ASCII") from None
        except OSError as exc:
            raise StoreError(f"{self.path}: {exc}") from exc
        else:
            try:
                energy = parse_record(text)
            except CorruptStore as exc:
                raise CorruptStore(f"{self.path}: {exc}") from None
            self.last_written = energy
        self.cached = energy
        return energy

    def store(self, energy: float) -> None:
        energy = float(energy)
        if not math.isfinite(energy) or energy < 0:
            raise StoreError(f"energy must be a non-negative number, got {energy!r}")
        if self.cached is None:
            self.load()
        if energy < self.cached:
            raise MonotonicityError(f"energy {energy!r} below stored {self.cached!r}")
        self.cached = energy
        if (self.policy == "min-delta" and self.last_written is not None
                and energy - self.last_written < self.delta):
            return
        self._write(energy)

    def flush(self) -> None:
        if self.cached is not None and self.cached != self.last_written:
            self._write(self.cached)

    def _write(self, energy: float) -> None:
        try:
            atomic_write_text(self.path, format_record(energy))
        except OSError as exc:
            raise StoreError(f"cannot write {self.path}: {exc}") from exc
        self.last_written = energy
