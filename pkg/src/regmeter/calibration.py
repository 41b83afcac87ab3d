"""Sensor-volts to amps calibration.

A calibration maps the RMS output of the current sensor (volts, after the
dc offset is removed) to the RMS load current in amps.  Two converters are
provided:

* :class:`FixedSensitivity` -- the datasheet approach, ``amps = volts / s``.
* :class:`CalibrationModel` -- a least-squares polynomial in the raw
  monomial basis, coefficients stored highest power first.

Both expose ``to_amps(x)`` so metering and error reporting can take either.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CalibrationError

log = logging.getLogger(__name__)

BISECT_TOL = 1e-9
BISECT_MAX_ITER = 200
DEFAULT_BRACKET = (0.0, 1.0)


@dataclass(frozen=True)
class CalibrationModel:
    degree: int
    coefficients: tuple
    fit_rmse: float | None = None
    fit_max_error: float | None = None

    def __post_init__(self):
        if self.degree < 0:
            raise CalibrationError(f"degree must be >= 0, got {self.degree}")
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) != self.degree + 1:
            raise CalibrationError(
                f"degree {self.degree} needs {self.degree + 1} coefficients, got {len(coeffs)}")
        object.__setattr__(self, "coefficients", coeffs)

    def to_amps(self, x):
        return apply(self, x)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coefficients": list(self.coefficients),
            "fit_rmse": self.fit_rmse,
            "fit_max_error": self.fit_max_error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationModel":
        try:
            return cls(
                degree=int(data["degree"]),
                coefficients=tuple(data["coefficients"]),
                fit_rmse=data.get("fit_rmse"),
                fit_max_error=data.get("fit_max_error"),
            )
        except (KeyError, TypeError) as exc:
            raise CalibrationError(f"malformed model document: {exc}") from exc


# Cubic for the ACS712-20A derived from bench measurements on resistive and
# mixed loads; x is sensor RMS volts, result is load RMS amps.
ACS712_CUBIC = CalibrationModel(3, (0.9188, -1.406, 10.86, -0.08648))


@dataclass(frozen=True)
class FixedSensitivity:
    """Datasheet conversion: a constant volts-per-amp gain."""

    sensitivity: float = 0.1

    def __post_init__(self):
        if not self.sensitivity > 0:
            raise CalibrationError(f"sensitivity must be positive, got {self.sensitivity}")

    def to_amps(self, x):
        return fixed_current(x, self.sensitivity)


@dataclass
class TrainingSet:
    """Paired sensor RMS volts (independent) and reference RMS amps (response)."""

    x: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.i = np.asarray(self.i, dtype=float).ravel()
        if self.x.shape != self.i.shape:
            raise CalibrationError("x and i must have the same length")

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "TrainingSet":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0), np.empty(0))
        x, i = zip(*pairs)
        return cls(np.array(x), np.array(i))

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.i.tolist()))


@dataclass
class ErrorReport:
    errors: np.ndarray = field(repr=False)
    max_abs_error: float
    rmse: float


def horner(coefficients: Sequence[float], x):
    """Evaluate a polynomial with coefficients in descending power order."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for c in coefficients:
        acc = acc * x + c
    return acc if acc.ndim else float(acc)


def apply(model: CalibrationModel, x):
    return horner(model.coefficients, x)


def fixed_current(x, sensitivity: float = 0.1):
    if not sensitivity > 0:
        raise CalibrationError(f"sensitivity must be positive, got {sensitivity}")
    x = np.asarray(x, dtype=float)
    out = x / sensitivity
    return out if out.ndim else float(out)


def _back_substitute(r: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = len(b)
    out = np.zeros(n)
    for k in range(n - 1, -1, -1):
        out[k] = (b[k] - r[k, k + 1:] @ out[k + 1:]) / r[k, k]
    return out


def fit(training: TrainingSet, degree: int = 3) -> CalibrationModel:
    """Least-squares polynomial fit of current on sensor volts.

    Solved through a reduced QR factorisation of the Vandermonde design
    matrix rather than the normal equations, which square its condition
    number.
    """
    if degree < 1:
        raise CalibrationError(f"degree must be >= 1, got {degree}")
    n = len(training)
    if n < degree + 1:
        raise CalibrationError(f"need at least {degree + 1} points for degree {degree}, got {n}")
    if not (np.all(np.isfinite(training.x)) and np.all(np.isfinite(training.i))):
        raise CalibrationError("training data contains non-finite values")
    distinct = len(np.unique(training.x))
    if distinct < degree + 1:
        raise CalibrationError(
            f"rank-deficient design: {distinct} distinct x values for degree {degree}")

    design = np.vander(training.x, degree + 1)
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * 1e-13:
        raise CalibrationError("rank-deficient design matrix")
    coeffs = _back_substitute(r, q.T @ training.i)

    resid = horner(coeffs, training.x) - training.i
    return CalibrationModel(
        degree=degree,
        coefficients=tuple(coeffs),
        fit_rmse=float(np.sqrt(np.mean(resid ** 2))),
        fit_max_error=float(np.max(np.abs(resid))),
    )


def derivative(coefficients: Sequence[float]) -> list[float]:
    d = len(coefficients) - 1
    return [c * (d - k) for k, c in enumerate(coefficients[:-1])]


def is_increasing(coefficients: Sequence[float], lo: float, hi: float) -> bool:
    """True if the polynomial is strictly increasing on [lo, hi].

    The derivative can only change sign at its real roots, so it must be
    positive between every pair of consecutive critical points.
    """
    deriv = np.trim_zeros(np.asarray(derivative(list(coefficients)), dtype=float), "f")
    if deriv.size == 0:
        return False
    crit = []
    if deriv.size > 1:
        crit = sorted({r.real for r in np.roots(deriv)
                       if abs(r.imag) < 1e-12 and lo < r.real < hi})
    knots = [lo, *crit, hi]
    return all(horner(deriv, 0.5 * (a + b)) > 0 for a, b in zip(knots, knots[1:]))


def invert(model: CalibrationModel, i_target: float,
           bracket: tuple[float, float] = DEFAULT_BRACKET,
           tol: float = BISECT_TOL, max_iter: int = BISECT_MAX_ITER) -> float:
    """Sensor volts x with model(x) == i_target, by bisection on ``bracket``."""
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise CalibrationError(f"invalid bracket {bracket}")
    if not is_increasing(model.coefficients, lo, hi):
        raise CalibrationError(f"model is not strictly increasing on [{lo}, {hi}]")
    f_lo, f_hi = apply(model, lo), apply(model, hi)
    if not f_lo - tol <= i_target <= f_hi + tol:
        raise CalibrationError(
            f"target {i_target} A not bracketed by [{f_lo:.6g}, {f_hi:.6g}] A")

    mid = lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        err = apply(model, mid) - i_target
        if abs(err) <= tol:
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= math.ulp(mid):
            break
    log.debug("bisection stopped at x=%r without reaching tolerance", mid)
    return mid


def error_report(converter, test: TrainingSet) -> ErrorReport:
    """Per-point |converter(x) - i| over a test set, plus max and RMSE."""
    if len(test) == 0:
        raise CalibrationError("empty test set")
    errors = np.abs(np.asarray(converter.to_amps(test.x), dtype=float) - test.i)
    return ErrorReport(
        errors=errors,
        max_abs_error=float(errors.max()),
        rmse=float(np.sqrt(np.mean(errors ** 2))),
    )


def save_model(model: CalibrationModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> CalibrationModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: not valid JSON ({exc})") from exc
    return CalibrationModel.from_dict(data)


def read_training_csv(path) -> TrainingSet:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"sensor_volts", "ref_amps"} <= set(reader.fieldnames):
            raise CalibrationError(f"{path}: header must contain sensor_volts,ref_amps")
        try:
            pairs = [(float(row["sensor_volts"]), float(row["ref_amps"])) for row in reader]
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"{path}: bad numeric value ({exc})") from exc
    return TrainingSet.from_pairs(pairs)


def write_training_csv(training: TrainingSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_volts", "ref_amps"])
        for x, i in training.pairs():
            writer.writerow([repr(x), repr(i)])
