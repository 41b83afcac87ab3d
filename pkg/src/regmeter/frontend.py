"""Analog front end emulation: waveforms, current sensor, 10-bit ADC.

Everything here is a pure function over value data.  A simulated run goes

    waveform -> (voltage divider | current sensor) -> quantize -> counts

and produces the same ``index,v_counts,i_counts,sample_period_us`` CSV that
a real capture would.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import calibration
from .calibration import ACS712_CUBIC, CalibrationModel
from .errors import MeterError, SensorError

ADC_MAX = 1023
ADC_VREF = 4.99
DEFAULT_PERIOD_US = 100.0
SENSOR_BRACKET = (0.0, 1.0)


@dataclass(frozen=True)
class WaveformSpec:
    """Sum of sinusoids ``amplitude * sin(2*pi*order*f*t + phase)``."""

    fundamental_frequency: float = 50.0
    components: tuple = ()

    def __post_init__(self):
        if not self.fundamental_frequency > 0:
            raise MeterError("fundamental_frequency must be positive")
        comps = tuple((int(k), float(a), float(ph)) for k, a, ph in self.components)
        for k, a, _ in comps:
            if k < 1:
                raise MeterError(f"harmonic order must be >= 1, got {k}")
            if a < 0:
                raise MeterError(f"amplitude must be >= 0, got {a}")
        object.__setattr__(self, "components", comps)

    def analytic_rms(self) -> float:
        # components sharing an order add as phasors before squaring
        phasors: dict[int, complex] = {}
        for k, a, ph in self.components:
            phasors[k] = phasors.get(k, 0j) + a * complex(math.cos(ph), math.sin(ph))
        return math.sqrt(sum(abs(z) ** 2 for z in phasors.values()) / 2)

    def scaled(self, factor: float) -> "WaveformSpec":
        return WaveformSpec(self.fundamental_frequency,
                            tuple((k, a * factor, ph) for k, a, ph in self.components))

    def to_dict(self) -> dict:
        return {"fundamental_frequency": self.fundamental_frequency,
                "components": [list(c) for c in self.components]}

    @classmethod
    def from_dict(cls, data: dict) -> "WaveformSpec":
        return cls(float(data.get("fundamental_frequency", 50.0)),
                   tuple(tuple(c) for c in data.get("components", ())))


@dataclass(frozen=True)
class SensorModel:
    """Hall-effect current sensor.

    ``ideal`` is a fixed gain.  ``polynomial-truth`` makes the effective gain
    depend on the RMS level so that ``truth_polynomial(sensor_rms)`` gives the
    true current; the polynomial must be strictly increasing on [0, 1] V.
    """

    kind: str = "ideal"
    nominal_sensitivity: float = 0.1
    dc_offset: float = 2.5
    truth_polynomial: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("ideal", "polynomial-truth"):
            raise SensorError(f"unknown sensor kind {self.kind!r}")
        if not self.nominal_sensitivity > 0:
            raise SensorError("nominal_sensitivity must be positive")
        if not 0 <= self.dc_offset <= ADC_VREF:
            raise SensorError(f"dc_offset must be in [0, {ADC_VREF}] V")
        if self.kind == "polynomial-truth":
            poly = self.truth_polynomial
            if poly is None:
                poly = ACS712_CUBIC.coefficients
            poly = tuple(float(c) for c in poly)
            if not calibration.is_increasing(poly, *SENSOR_BRACKET):
                raise SensorError("truth_polynomial must be strictly increasing on [0, 1] V")
            object.__setattr__(self, "truth_polynomial", poly)

    def truth_model(self) -> CalibrationModel | None:
        if self.truth_polynomial is None:
            return None
        return CalibrationModel(len(self.truth_polynomial) - 1, self.truth_polynomial)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "nominal_sensitivity": self.nominal_sensitivity,
               "dc_offset": self.dc_offset}
        if self.truth_polynomial is not None:
            out["truth_polynomial"] = list(self.truth_polynomial)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SensorModel":
        poly = data.get("truth_polynomial")
        return cls(kind=data.get("kind", "ideal"),
                   nominal_sensitivity=float(data.get("nominal_sensitivity", 0.1)),
                   dc_offset=float(data.get("dc_offset", 2.5)),
                   truth_polynomial=tuple(poly) if poly is not None else None)


def sample_times(sample_count: int, sample_period_us: float) -> np.ndarray:
    if sample_count < 1:
        raise MeterError(f"sample_count must be >= 1, got {sample_count}")
    if not sample_period_us > 0:
        raise MeterError(f"sample_period must be positive, got {sample_period_us}")
    return np.arange(sample_count) * (sample_period_us * 1e-6)


def synthesize(spec: WaveformSpec, sample_count: int,
               sample_period_us: float = DEFAULT_PERIOD_US) -> np.ndarray:
    t = sample_times(sample_count, sample_period_us)
    out = np.zeros(sample_count)
    w = 2 * math.pi * spec.fundamental_frequency
    for order, amp, phase in spec.components:
        out += amp * np.sin(order * w * t + phase)
    return out


def effective_sensitivity(model: SensorModel, target_rms: float) -> float:
    """Volts per amp the sensor exhibits at a given RMS current."""
    if model.kind == "ideal" or target_rms == 0:
        return model.nominal_sensitivity
    truth = model.truth_model()
    try:
        x_star = calibration.invert(truth, target_rms, SENSOR_BRACKET)
    except calibration.CalibrationError as exc:
        raise SensorError(str(exc)) from exc
    return x_star / target_rms


def sensor_transfer(current: np.ndarray, model: SensorModel,
                    target_rms: float | None = None) -> np.ndarray:
    """Sensor output volts (offset included) for an instantaneous current series.

    ``target_rms`` defaults to the sample RMS of ``current``.
    """
    current = np.asarray(current, dtype=float)
    if target_rms is None:
        target_rms = float(np.sqrt(np.mean(current ** 2))) if current.size else 0.0
    gain = effective_sensitivity(model, target_rms)
    return model.dc_offset + gain * current


def voltage_transfer(mains: np.ndarray, v_gain: float, dc_offset: float = 2.5) -> np.ndarray:
    """Step-down and level shift of the mains voltage onto the ADC pin."""
    if not v_gain > 0:
        raise MeterError("v_gain must be positive")
    return dc_offset + np.asarray(mains, dtype=float) / v_gain


def quantize(volts):
    """ADC counts for an input voltage; rounds half away from zero and clamps."""
    v = np.asarray(volts, dtype=float)
    scaled = v / ADC_VREF * ADC_MAX
    codes = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    codes = np.clip(codes, 0, ADC_MAX).astype(np.int64)
    return codes if codes.ndim else int(codes)


def to_volts(counts):
    c = np.asarray(counts)
    if c.size and (c.min() < 0 or c.max() > ADC_MAX):
        raise MeterError(f"ADC counts must lie in [0, {ADC_MAX}]")
    out = c.astype(float) * ADC_VREF / ADC_MAX
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Scenario:
    """A load scenario: voltage and current shapes plus the analog chain.

    ``current`` is a shape; simulation rescales it to the requested RMS.
    """

    name: str
    voltage: WaveformSpec
    current: WaveformSpec
    sensor: SensorModel = field(default_factory=SensorModel)
    v_gain: float = 150.0
    v_offset: float = 2.5

    def to_dict(self) -> dict:
        return {"name": self.name, "voltage": self.voltage.to_dict(),
                "current": self.current.to_dict(), "sensor": self.sensor.to_dict(),
                "v_gain": self.v_gain, "v_offset": self.v_offset}

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            return cls(name=data.get("name", "custom"),
                       voltage=WaveformSpec.from_dict(data["voltage"]),
                       current=WaveformSpec.from_dict(data["current"]),
                       sensor=SensorModel.from_dict(data.get("sensor", {})),
                       v_gain=float(data.get("v_gain", 150.0)),
                       v_offset=float(data.get("v_offset", 2.5)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MeterError):
                raise
            raise MeterError(f"malformed scenario: {exc}") from exc


MAINS_PEAK = 230.0 * math.sqrt(2)

PRESETS = {
    # rheostat on an autotransformer: sinusoidal and in phase
    "type-a": Scenario(
        "type-a",
        voltage=WaveformSpec(50.0, ((1, MAINS_PEAK, 0.0),)),
        current=WaveformSpec(50.0, ((1, 1.0, 0.0),)),
    ),
    # rheostat plus CFL, fan and fridge: a lagging 0.5-PF branch and
    # odd harmonics from the lamp ballast
    "type-b": Scenario(
        "type-b",
        voltage=WaveformSpec(50.0, ((1, MAINS_PEAK, 0.0),)),
        current=WaveformSpec(50.0, ((1, 0.7, 0.0), (1, 0.5, -math.pi / 3),
                                    (3, 0.25, 0.3), (5, 0.12, 0.6))),
    ),
    # pure reactive load, current 90 degrees behind voltage
    "quadrature": Scenario(
        "quadrature",
        voltage=WaveformSpec(50.0, ((1, MAINS_PEAK, 0.0),)),
        current=WaveformSpec(50.0, ((1, 1.0, -math.pi / 2),)),
    ),
}


def load_scenario(name_or_path, sensor_kind: str | None = None) -> Scenario:
    """A preset by name, or a scenario JSON document by path."""
    if str(name_or_path) in PRESETS:
        sc = PRESETS[str(name_or_path)]
    else:
        try:
            sc = Scenario.from_dict(json.loads(Path(name_or_path).read_text()))
        except FileNotFoundError as exc:
            raise MeterError(f"unknown scenario {name_or_path!r}") from exc
        except json.JSONDecodeError as exc:
            raise MeterError(f"{name_or_path}: not valid JSON ({exc})") from exc
    if sensor_kind is not None and sensor_kind != sc.sensor.kind:
        sc = Scenario(sc.name, sc.voltage, sc.current,
                      SensorModel(sensor_kind, sc.sensor.nominal_sensitivity, sc.sensor.dc_offset,
                                  sc.sensor.truth_polynomial),
                      sc.v_gain, sc.v_offset)
    return sc


@dataclass
class Simulation:
    v_counts: np.ndarray
    i_counts: np.ndarray
    sample_period_us: float
    v_mains: np.ndarray = field(repr=False)
    i_load: np.ndarray = field(repr=False)

    def true_energy_wh(self) -> float:
        """Energy of the analog waveforms, sum of v*i*dt, in watt-hours."""
        dt_h = self.sample_period_us * 1e-6 / 3600
        return float(np.sum(self.v_mains * self.i_load) * dt_h)


def simulate(scenario: Scenario, i_rms: float, sample_count: int,
             sample_period_us: float = DEFAULT_PERIOD_US, noise_volts: float = 0.0,
             rng: np.random.Generator | None = None) -> Simulation:
    """Run the analog chain and ADC for one scenario at a target RMS current."""
    if i_rms < 0:
        raise MeterError("i_rms must be >= 0")
    v_mains = synthesize(scenario.voltage, sample_count, sample_period_us)
    shape_rms = scenario.current.analytic_rms()
    factor = i_rms / shape_rms if shape_rms > 0 else 0.0
    i_load = synthesize(scenario.current.scaled(factor), sample_count, sample_period_us)

    v_pin = voltage_transfer(v_mains, scenario.v_gain, scenario.v_offset)
    i_pin = sensor_transfer(i_load, scenario.sensor, target_rms=i_rms)
    if noise_volts > 0:
        rng = rng if rng is not None else np.random.default_rng()
        v_pin = v_pin + rng.normal(0.0, noise_volts, sample_count)
        i_pin = i_pin + rng.normal(0.0, noise_volts, sample_count)
    return Simulation(quantize(v_pin), quantize(i_pin), sample_period_us, v_mains, i_load)


def write_samples_csv(path, v_counts: Sequence[int], i_counts: Sequence[int],
                      sample_period_us: float) -> None:
    v_counts = np.asarray(v_counts)
    i_counts = np.asarray(i_counts)
    period = repr(float(sample_period_us))
    with open(path, "w", newline="") as fh:
        fh.write("index,v_counts,i_counts,sample_period_us\n")
        for start in range(0, len(v_counts), 100_000):
            stop = start + 100_000
            idx = range(start, min(stop, len(v_counts)))
            fh.writelines(f"{j},{v},{i},{period}\n" for j, v, i in
                          zip(idx, v_counts[start:stop].tolist(), i_counts[start:stop].tolist()))


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray, float]:
    """(v_counts, i_counts, sample_period_us) from a sample CSV."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != ["index", "v_counts", "i_counts", "sample_period_us"]:
            raise MeterError(f"{path}: unexpected header {header}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise MeterError(f"{path}: bad sample row ({exc})") from exc
    if data.size == 0:
        raise MeterError(f"{path}: no samples")
    if data.shape[1] != 4:
        raise MeterError(f"{path}: expected 4 columns, got {data.shape[1]}")
    periods = np.unique(data[:, 3])
    if len(periods) != 1:
        raise MeterError(f"{path}: sample_period_us must be constant")
    return data[:, 1].astype(np.int64), data[:, 2].astype(np.int64), float(periods[0])
