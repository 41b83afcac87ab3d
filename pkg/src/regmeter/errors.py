"""Exception hierarchy shared by every regmeter module."""


class MeterError(ValueError):
    """Base class for domain errors (bad input, failed validation, etc)."""


class SensorError(MeterError):
    pass


class UndefinedPowerFactor(MeterError):
    """Raised when apparent power is zero so P/S has no meaning."""


class CalibrationError(MeterError):
    pass


class TariffError(MeterError):
    pass


class StoreError(MeterError):
    pass


class CorruptStore(StoreError):
    """The register file exists but does not parse or fails its checksum."""


class MonotonicityError(StoreError):
    pass
