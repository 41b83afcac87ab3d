"""Block-rate billing and demand-response status.

Money and units are handled as :class:`decimal.Decimal`; floats passed in
are converted through their shortest repr so ``0.1`` means 0.1 exactly.
"""

from __future__ import annotations

import bisect
import enum
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from pathlib import Path

from .errors import TariffError

MODES = ("telescopic", "flat-slab")


def to_decimal(value) -> Decimal:
    if isinstance(value, Decimal):
        return value
    try:
        return Decimal(str(value))
    except InvalidOperation as exc:
        raise TariffError(f"not a number: {value!r}") from exc


@dataclass(frozen=True)
class TariffSchedule:
    """Consumption blocks and their per-unit rates.

    Block ``k`` covers ``[boundaries[k-1], boundaries[k])``; the first block
    starts at 0 and the last is open-ended.
    """

    boundaries: tuple
    rates: tuple
    mode: str = "telescopic"
    warning_margin: Decimal = Decimal("0.1")
    minor_unit: Decimal = Decimal("0.01")
    period_days: int = 31

    def __post_init__(self):
        b = tuple(to_decimal(x) for x in self.boundaries)
        r = tuple(to_decimal(x) for x in self.rates)
        m = to_decimal(self.warning_margin)
        mu = to_decimal(self.minor_unit)
        if not b:
            raise TariffError("at least one boundary required")
        if b[0] <= 0 or any(lo >= hi for lo, hi in zip(b, b[1:])):
            raise TariffError("boundaries must be positive and strictly ascending")
        if len(r) != len(b) + 1:
            raise TariffError(f"{len(b)} boundaries need {len(b) + 1} rates, got {len(r)}")
        if r[0] < 0 or any(lo >= hi for lo, hi in zip(r, r[1:])):
            raise TariffError("rates must be non-negative and strictly ascending")
        if self.mode not in MODES:
            raise TariffError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < m < 1:
            raise TariffError("warning_margin must lie in (0, 1)")
        if mu <= 0:
            raise TariffError("minor_unit must be positive")
        if int(self.period_days) < 1:
            raise TariffError("period_days must be >= 1")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "warning_margin", m)
        object.__setattr__(self, "minor_unit", mu)
        object.__setattr__(self, "period_days", int(self.period_days))

    def block_of(self, units) -> int:
        return bisect.bisect_right(self.boundaries, to_decimal(units))

    def to_dict(self) -> dict:
        return {"boundaries": [str(b) for b in self.boundaries],
                "rates": [str(r) for r in self.rates],
                "mode": self.mode,
                "warning_margin": str(self.warning_margin),
                "minor_unit": str(self.minor_unit),
                "period_days": self.period_days}

    @classmethod
    def from_dict(cls, data: dict) -> "TariffSchedule":
        try:
            return cls(boundaries=tuple(data["boundaries"]), rates=tuple(data["rates"]),
                       mode=data.get("mode", "telescopic"),
                       warning_margin=data.get("warning_margin", "0.1"),
                       minor_unit=data.get("minor_unit", "0.01"),
                       period_days=data.get("period_days", 31))
        except KeyError as exc:
            raise TariffError(f"schedule missing field {exc}") from exc


def load_schedule(path) -> TariffSchedule:
    try:
        data = json.loads(Path(path).read_text(), parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise TariffError(f"{path}: not valid JSON ({exc})") from exc
    return TariffSchedule.from_dict(data)


@dataclass(frozen=True)
class BlockCharge:
    lower: Decimal
    upper: Decimal | None
    units: Decimal
    rate: Decimal
    amount: Decimal


def itemize(units, schedule: TariffSchedule) -> list[BlockCharge]:
    """Per-block breakdown of a bill, amounts unrounded."""
    u = to_decimal(units)
    if u < 0:
        raise TariffError("units must be >= 0")
    edges = (Decimal(0), *schedule.boundaries)
    uppers = (*schedule.boundaries, None)
    if schedule.mode == "flat-slab":
        k = schedule.block_of(u)
        rate = schedule.rates[k]
        return [BlockCharge(edges[k], uppers[k], u, rate, u * rate)]
    items = []
    for lower, upper, rate in zip(edges, uppers, schedule.rates):
        if u <= lower:
            break
        in_block = (u if upper is None else min(u, upper)) - lower
        items.append(BlockCharge(lower, upper, in_block, rate, in_block * rate))
    return items


def bill(units, schedule: TariffSchedule) -> Decimal:
    total = sum((item.amount for item in itemize(units, schedule)), Decimal(0))
    return total.quantize(schedule.minor_unit, rounding=ROUND_HALF_UP)


class DrState(enum.IntEnum):
    NORMAL = 0
    WARNING = 1
    CROSSED = 2


@dataclass(frozen=True)
class DrStatus:
    state: DrState
    boundary: Decimal  # upcoming boundary, or the last one once crossed

    def __str__(self):
        if self.state is DrState.NORMAL:
            return "Normal"
        return f"{self.state.name.title()}({self.boundary})"


def dr_status(cumulative_units, schedule: TariffSchedule) -> DrStatus:
    u = to_decimal(cumulative_units)
    if u < 0:
        raise TariffError("units must be >= 0")
    k = bisect.bisect_right(schedule.boundaries, u)
    if k == len(schedule.boundaries):
        return DrStatus(DrState.CROSSED, schedule.boundaries[-1])
    nxt = schedule.boundaries[k]
    if u >= nxt * (1 - schedule.warning_margin):
        return DrStatus(DrState.WARNING, nxt)
    return DrStatus(DrState.NORMAL, nxt)
