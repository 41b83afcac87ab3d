"""Head-end collector for length-prefixed meter frames.

Frames arrive on a byte stream (TCP connection or file), each preceded by a
2-byte big-endian length.  Valid frames go to ``meter_<id>.ndjson`` in the
log directory and into an in-memory latest-value table; anything else is
counted by reason and dropped.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

from ..errors import MeterError
from .frame import FrameError, MeterFrame, decode, encode, pack_stream

log = logging.getLogger(__name__)


class CollectorError(MeterError):
    """Fatal collector failure (bad log directory, unbindable endpoint)."""


@dataclass(frozen=True)
class CollectorRecord:
    frame: MeterFrame
    received_at: float
    valid: bool = True

    def to_json(self) -> str:
        return json.dumps({**self.frame.to_dict(), "received_at": self.received_at})


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class Collector:
    def __init__(self, log_dir):
        self.log_dir = Path(log_dir)
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CollectorError(f"cannot create log directory {self.log_dir}: {exc}") from exc
        if not os.access(self.log_dir, os.W_OK | os.X_OK):
            raise CollectorError(f"log directory {self.log_dir} is not writable")

        self.snapshot: dict[int, CollectorRecord] = {}
        self.accepted = 0
        self.rejected: Counter[str] = Counter()
        self._lock = threading.Lock()
        self._meter_locks: dict[int, threading.Lock] = {}
        self._files: dict[int, object] = {}
        self._server: socketserver.ThreadingTCPServer | None = None

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    def _reject(self, reason: str) -> None:
        with self._lock:
            self.rejected[reason] += 1

    def _meter_lock(self, meter_id: int) -> threading.Lock:
        with self._lock:
            return self._meter_locks.setdefault(meter_id, threading.Lock())

    def log_path(self, meter_id: int) -> Path:
        return self.log_dir / f"meter_{meter_id}.ndjson"

    def ingest(self, payload: bytes, received_at: float | None = None) -> CollectorRecord | None:
        """Validate one frame and record it; returns None if it was rejected."""
        try:
            frame = decode(payload)
        except FrameError as exc:
            log.warning("rejected frame: %s", exc)
            self._reject(exc.code)
            return None

        record = CollectorRecord(frame, time.time() if received_at is None else received_at)
        with self._meter_lock(frame.meter_id):
            latest = self.snapshot.get(frame.meter_id)
            if latest is not None and frame.energy < latest.frame.energy:
                log.warning("meter %d energy went backwards (%d < %d mWh)",
                            frame.meter_id, frame.energy, latest.frame.energy)
                self._reject("energy-regression")
                return None
            fh = self._files.get(frame.meter_id)
            if fh is None:
                try:
                    fh = open(self.log_path(frame.meter_id), "a", encoding="utf-8")
                except OSError as exc:
                    raise CollectorError(f"cannot open log for meter {frame.meter_id}: {exc}") from exc
                self._files[frame.meter_id] = fh
            fh.write(record.to_json() + "\n")
            fh.flush()
            with self._lock:
                self.snapshot[frame.meter_id] = record
                self.accepted += 1
        return record

    def ingest_stream(self, stream: BinaryIO) -> int:
        """Consume length-prefixed frames until EOF; returns frames accepted."""
        accepted = 0
        while True:
            prefix = _read_exact(stream, 2)
            if not prefix:
                break
            if len(prefix) < 2:
                self._reject("truncated")
                break
            length = int.from_bytes(prefix, "big")
            payload = _read_exact(stream, length)
            if len(payload) < length:
                self._reject("truncated")
                break
            if self.ingest(payload) is not None:
                accepted += 1
        return accepted

    def ingest_file(self, path) -> int:
        with open(path, "rb") as fh:
            return self.ingest_stream(fh)

    def serve(self, host: str, port: int) -> tuple[str, int]:
        """Start a threaded TCP listener in the background; returns the bound address."""
        collector = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                collector.ingest_stream(self.rfile)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        try:
            self._server = Server((host, port), Handler)
        except OSError as exc:
            raise CollectorError(f"cannot listen on {host}:{port}: {exc}") from exc
        threading.Thread(target=self._server.serve_forever, name="collector",
                         daemon=True).start()
        return self._server.server_address[:2]

    def close(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        with self._lock:
            for fh in self._files.values():
                fh.flush()
                fh.close()
            self._files.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def summary(self) -> dict:
        with self._lock:
            return {"accepted": self.accepted, "rejected": dict(self.rejected),
                    "meters": sorted(self.snapshot)}


def send_frames(host: str, port: int, frames: Iterable[MeterFrame | bytes]) -> int:
    """Open one connection and stream the frames; returns the count sent."""
    count = 0
    with socket.create_connection((host, port), timeout=5) as sock:
        for f in frames:
            payload = f if isinstance(f, (bytes, bytearray)) else encode(f)
            sock.sendall(pack_stream(bytes(payload)))
            count += 1
    return count
