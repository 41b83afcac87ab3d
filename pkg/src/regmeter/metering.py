"""Metering loop: offset removal, RMS, power, power factor, energy.

One call to :func:`metering_step` is one pass of the firmware loop::

    acquire -> subtract offset -> Vrms, Irms, P -> S -> PF -> accumulate

:class:`Meter` wraps that into a stateful loop with persistence and a
measurement log.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

from .errors import MeterError, UndefinedPowerFactor
from .frontend import DEFAULT_PERIOD_US, to_volts

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 200
FIVE_MINUTE_SLOTS_PER_DAY = 24 * 12
US_PER_HOUR = 3.6e9
LOG_FIELDS = ("t_hours", "v_rms", "i_rms", "p", "s", "pf", "energy_wh")


@dataclass(frozen=True)
class ChannelConfig:
    """Analog chain as seen by the firmware.

    An offset of ``None`` means subtract the window mean; a number is a
    fixed offset in ADC-pin volts.
    """

    v_gain: float = 150.0
    v_offset: float | None = None
    i_offset: float | None = None
    zero_current_threshold: float = 0.02

    def __post_init__(self):
        if not self.v_gain > 0:
            raise MeterError("v_gain must be positive")
        if self.zero_current_threshold < 0:
            raise MeterError("zero_current_threshold must be >= 0")


@dataclass(frozen=True)
class SampleWindow:
    v_counts: np.ndarray
    i_counts: np.ndarray
    sample_period_us: float = DEFAULT_PERIOD_US

    def __post_init__(self):
        v = np.asarray(self.v_counts)
        i = np.asarray(self.i_counts)
        if v.size == 0 or v.shape != i.shape:
            raise MeterError("window arrays must be non-empty and of equal length")
        if not self.sample_period_us > 0:
            raise MeterError("sample_period_us must be positive")
        object.__setattr__(self, "v_counts", v)
        object.__setattr__(self, "i_counts", i)

    def __len__(self):
        return len(self.v_counts)

    @property
    def duration_h(self) -> float:
        return len(self) * self.sample_period_us / US_PER_HOUR


@dataclass(frozen=True)
class Measurements:
    v_rms: float
    i_rms: float
    p: float
    s: float
    pf: float | None  # None when S == 0
    dt: float  # hours


@dataclass(frozen=True)
class MeterState:
    energy: float = 0.0  # Wh
    last_update: float = 0.0  # hours on the meter clock


def remove_offset(series, offset: float | None = None) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise MeterError("empty series")
    if offset is None:
        # a flat window must centre to exact zeros, which x.mean() does not guarantee
        offset = x[0] if np.all(x == x[0]) else x.mean()
    return x - offset


def rms(series) -> float:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise MeterError("empty series")
    return float(np.sqrt(np.mean(x * x)))


def active_power(v_series, i_series) -> float:
    v = np.asarray(v_series, dtype=float)
    i = np.asarray(i_series, dtype=float)
    if v.size == 0 or v.shape != i.shape:
        raise MeterError("voltage and current series must be non-empty and equal length")
    return float(np.mean(v * i))


def apparent_power(v_rms: float, i_rms: float) -> float:
    if v_rms < 0 or i_rms < 0:
        raise MeterError("RMS values must be non-negative")
    return v_rms * i_rms


def power_factor(p: float, s: float) -> float:
    if s == 0:
        raise UndefinedPowerFactor("power factor undefined at zero apparent power")
    if s < 0:
        raise MeterError("apparent power must be non-negative")
    pf = abs(p) / s
    if pf > 1.0:
        log.debug("power factor %.6f clamped to 1", pf)
        pf = 1.0
    return pf


def accumulate(state: MeterState, p: float, dt: float, i_rms: float,
               threshold: float = 0.02, now: float | None = None) -> MeterState:
    """Add ``p * dt`` to the register when current is above the deadband."""
    if dt < 0:
        raise MeterError("dt must be >= 0")
    energy = state.energy
    if i_rms > threshold:
        if p < 0:
            log.info("negative active power %.3f W treated as zero", p)
            p = 0.0
        energy += p * dt
    return MeterState(energy, state.last_update + dt if now is None else now)


def measure(v_pin, i_pin, dt: float, cfg: ChannelConfig, converter) -> Measurements:
    """Measurements for one window of ADC-pin voltages (before quantization or after)."""
    v = remove_offset(v_pin, cfg.v_offset) * cfg.v_gain
    x = remove_offset(i_pin, cfg.i_offset)
    x_rms = rms(x)
    i_rms = max(float(converter.to_amps(x_rms)), 0.0) if x_rms > 0 else 0.0
    # instantaneous current rides on the same RMS-level conversion ratio
    i = x * (i_rms / x_rms) if x_rms > 0 else np.zeros_like(x)

    v_rms = rms(v)
    p = active_power(v, i)
    s = apparent_power(v_rms, i_rms)
    try:
        pf = power_factor(p, s)
    except UndefinedPowerFactor:
        pf = None
    return Measurements(v_rms, i_rms, p, s, pf, dt)


def metering_step(window: SampleWindow, cfg: ChannelConfig, converter,
                  state: MeterState, now: float | None = None) -> tuple[Measurements, MeterState]:
    m = measure(to_volts(window.v_counts), to_volts(window.i_counts),
                window.duration_h, cfg, converter)
    new_state = accumulate(state, m.p, m.dt, m.i_rms, cfg.zero_current_threshold, now)
    return m, new_state


def split_windows(v_counts, i_counts, sample_period_us: float,
                  size: int = DEFAULT_WINDOW) -> Iterator[SampleWindow]:
    """Consecutive windows of ``size`` samples; a short tail becomes the last window."""
    if size < 1:
        raise MeterError("window size must be >= 1")
    v_counts = np.asarray(v_counts)
    i_counts = np.asarray(i_counts)
    if v_counts.shape != i_counts.shape:
        raise MeterError("voltage and current captures differ in length")
    for start in range(0, len(v_counts), size):
        yield SampleWindow(v_counts[start:start + size], i_counts[start:start + size],
                           sample_period_us)


def project_monthly(e_5min, days: int = 31):
    """Extrapolate a 5-minute energy reading to a billing period of ``days``.

    Works unchanged for ``float`` and ``decimal.Decimal`` inputs.
    """
    if e_5min < 0:
        raise MeterError("energy must be >= 0")
    if days < 0:
        raise MeterError("days must be >= 0")
    return e_5min * (days * FIVE_MINUTE_SLOTS_PER_DAY)


@dataclass
class Meter:
    """Stateful metering loop for one meter.

    ``clock="sample"`` advances time by window duration; ``clock="wall"``
    uses the host's monotonic clock between steps, for live captures.
    """

    cfg: ChannelConfig
    converter: object
    register: object | None = None
    clock: str = "sample"
    state: MeterState = field(default_factory=MeterState)
    _last_wall: float | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.clock not in ("sample", "wall"):
            raise MeterError(f"unknown clock mode {self.clock!r}")
        if self.register is not None:
            self.state = replace(self.state, energy=self.register.load())

    def step(self, window: SampleWindow) -> Measurements:
        if self.clock == "wall":
            now = time.monotonic()
            dt = window.duration_h if self._last_wall is None else (now - self._last_wall) / 3600
            self._last_wall = now
            m = measure(to_volts(window.v_counts), to_volts(window.i_counts), dt,
                        self.cfg, self.converter)
            self.state = accumulate(self.state, m.p, dt, m.i_rms, self.cfg.zero_current_threshold)
        else:
            m, self.state = metering_step(window, self.cfg, self.converter, self.state)
        if self.register is not None:
            self.register.store(self.state.energy)
        return m

    def run(self, windows: Iterable[SampleWindow],
            log_path=None) -> list[tuple[Measurements, MeterState]]:
        out = []
        writer = fh = None
        if log_path is not None:
            fh = open(log_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(LOG_FIELDS)
        try:
            for w in windows:
                m = self.step(w)
                out.append((m, self.state))
                if writer is not None:
                    writer.writerow([repr(self.state.last_update), repr(m.v_rms), repr(m.i_rms),
                                     repr(m.p), repr(m.s), "" if m.pf is None else repr(m.pf),
                                     repr(self.state.energy)])
        finally:
            if fh is not None:
                fh.close()
        if self.register is not None and hasattr(self.register, "flush"):
            self.register.flush()
        return out
