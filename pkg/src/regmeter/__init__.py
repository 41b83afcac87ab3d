"""Software emulation of a single-phase smart energy meter.

Subpackages: ``frontend`` (waveforms, sensor, ADC), ``metering`` (RMS,
power, energy), ``calibration`` (sensor-volts to amps regression),
``tariff`` (block-rate billing and demand response), ``amr`` (telemetry
frames and collector) and ``nvstore`` (crash-safe energy register).
"""

from .calibration import ACS712_CUBIC, CalibrationModel, FixedSensitivity, TrainingSet
from .errors import MeterError
from .metering import ChannelConfig, Meter, Measurements, MeterState, SampleWindow

__version__ = "0.1.0"

__all__ = [
    "ACS712_CUBIC", "CalibrationModel", "FixedSensitivity", "TrainingSet", "MeterError",
    "ChannelConfig", "Meter", "Measurements", "MeterState", "SampleWindow",
]
