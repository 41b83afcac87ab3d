"""Command line entry point: ``regmeter <subcommand> ...``.

Exit status is 0 on success, 1 on domain errors (bad frame, failed fit,
corrupt register, ...) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import signal
import sys
import threading
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

import numpy as np

from . import calibration, frontend, metering, tariff
from .amr import Collector, MeterFrame, decode, encode, pack_stream
from .calibration import ACS712_CUBIC, FixedSensitivity
from .errors import MeterError
from .metering import ChannelConfig, Meter, project_monthly, split_windows
from .nvstore import EnergyRegister


MINUTES_PER_SLOT = 5


@dataclass(frozen=True)
class CompareReport:
    duration_h: float
    e_fixed: float  # Wh per 5 minutes
    e_regression: float
    difference: float
    monthly_fixed: float
    monthly_regression: float
    monthly_difference: float
    days: int = 31
    e_truth: float | None = None

    def table(self) -> str:
        rows = [("", "Without Regression", "With Regression", "Difference")]
        rows.append((f"Energy Consumption (Wh) ({MINUTES_PER_SLOT} minutes)",
                     f"{self.e_fixed:.4f}", f"{self.e_regression:.4f}", f"{self.difference:.4f}"))
        rows.append((f"Predicted Energy Consumption (Wh) ({self.days} days)",
                     f"{self.monthly_fixed:.2f}", f"{self.monthly_regression:.2f}",
                     f"{self.monthly_difference:.2f}"))
        widths = [max(len(r[k]) for r in rows) for k in range(4)]
        lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w)
                           for k, (c, w) in enumerate(zip(r, widths))) for r in rows]
        if self.e_truth is not None:
            lines.append(f"Ground-truth energy (Wh) ({MINUTES_PER_SLOT} minutes): {self.e_truth:.4f}")
        return "\n".join(lines)


def compare_runs(v_counts, i_counts, sample_period_us: float, model,
                 cfg: ChannelConfig | None = None, window: int = metering.DEFAULT_WINDOW,
                 sensitivity: float = 0.1, truth_wh: float | None = None,
                 days: int = 31) -> CompareReport:
    """Meter one capture twice, fixed sensitivity then regression, in Table IV layout.

    Energies are normalised to a 5-minute interval before projection.
    """
    cfg = cfg or ChannelConfig()
    energies = []
    for conv in (FixedSensitivity(sensitivity), model):
        meter = Meter(cfg, conv)
        meter.run(split_windows(v_counts, i_counts, sample_period_us, window))
        energies.append(meter.state.energy)
    duration_h = len(v_counts) * sample_period_us / metering.US_PER_HOUR
    if duration_h <= 0:
        raise MeterError("empty capture")
    to_slot = (MINUTES_PER_SLOT / 60) / duration_h
    e_fixed, e_reg = (e * to_slot for e in energies)
    diff = e_reg - e_fixed
    return CompareReport(
        duration_h=duration_h, e_fixed=e_fixed, e_regression=e_reg, difference=diff,
        monthly_fixed=project_monthly(e_fixed, days),
        monthly_regression=project_monthly(e_reg, days),
        monthly_difference=math.copysign(project_monthly(abs(diff), days), diff),
        days=days,
        e_truth=None if truth_wh is None else truth_wh * to_slot,
    )


# ---------------------------------------------------------------- helpers

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _positive_float(text):
    value = _non_negative_float(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _decimal(text):
    try:
        return Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _decimal_list(text):
    return [_decimal(t.strip()) for t in text.split(",") if t.strip()]


def _endpoint(text):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _converter(args):
    if args.no_regression:
        return FixedSensitivity(args.sensitivity)
    return calibration.load_model(args.model) if args.model else ACS712_CUBIC


def _channel_config(args) -> ChannelConfig:
    fixed = args.offset_mode == "fixed"
    return ChannelConfig(v_gain=args.v_gain,
                         v_offset=args.v_offset if fixed else None,
                         i_offset=args.i_offset if fixed else None,
                         zero_current_threshold=args.threshold)


def _schedule(args) -> tariff.TariffSchedule:
    if args.schedule:
        sched = tariff.load_schedule(args.schedule)
        overrides = {}
        if args.mode is not None:
            overrides["mode"] = args.mode
        if args.margin is not None:
            overrides["warning_margin"] = args.margin
        if overrides:
            sched = tariff.TariffSchedule.from_dict({**sched.to_dict(), **overrides})
        return sched
    if not (args.boundaries and args.rates):
        raise MeterError("give --schedule or both --boundaries and --rates")
    return tariff.TariffSchedule(tuple(args.boundaries), tuple(args.rates),
                                 mode=args.mode or "telescopic",
                                 warning_margin=args.margin if args.margin is not None else Decimal("0.1"))


def _run_simulation(args) -> frontend.Simulation:
    sc = frontend.load_scenario(args.scenario, args.sensor)
    if args.samples is not None:
        n = args.samples
    else:
        n = int(round(args.minutes * 60e6 / args.period_us))
        if n < 1:
            raise MeterError("duration shorter than one sample")
    rng = np.random.default_rng(args.seed)
    sim = frontend.simulate(sc, args.irms, n, args.period_us, args.noise, rng)
    if args.decimate > 1:
        k = args.decimate
        sim = frontend.Simulation(sim.v_counts[::k], sim.i_counts[::k], sim.sample_period_us * k,
                                  sim.v_mains[::k], sim.i_load[::k])
    return sim


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    sim = _run_simulation(args)
    frontend.write_samples_csv(args.out, sim.v_counts, sim.i_counts, sim.sample_period_us)
    print(f"wrote {len(sim.v_counts)} samples at {sim.sample_period_us:g} us to {args.out}")
    print(f"true energy {sim.true_energy_wh():.6f} Wh")
    return 0


def cmd_calibrate_sweep(args):
    sc = frontend.load_scenario(args.scenario, "polynomial-truth")
    rng = np.random.default_rng(args.seed)
    pairs = []
    for target in np.linspace(args.min, args.max, args.points):
        sim = frontend.simulate(sc, float(target), args.window, args.period_us)
        pin = frontend.sensor_transfer(sim.i_load, sc.sensor, target_rms=float(target))
        x = metering.rms(pin - sc.sensor.dc_offset)
        if args.noise > 0:
            x += rng.normal(0.0, args.noise)
        pairs.append((x, float(target)))
    calibration.write_training_csv(calibration.TrainingSet.from_pairs(pairs), args.out)
    print(f"wrote {len(pairs)} training pairs to {args.out}")
    return 0


def cmd_calibrate_fit(args):
    training = calibration.read_training_csv(args.train)
    model = calibration.fit(training, args.degree)
    if args.out:
        calibration.save_model(model, args.out)
    print(json.dumps(model.to_dict(), indent=2))
    return 0


def cmd_calibrate_eval(args):
    model = calibration.load_model(args.model) if args.model else ACS712_CUBIC
    if args.x:
        for x in args.x:
            print(f"{x!r}\t{calibration.apply(model, x)!r}")
        return 0
    test = calibration.read_training_csv(args.test)
    reg = calibration.error_report(model, test)
    fixed = calibration.error_report(FixedSensitivity(args.sensitivity), test)
    print(f"{'converter':<12} {'max_abs_A':>12} {'rmse_A':>12}")
    print(f"{'fixed':<12} {fixed.max_abs_error:>12.6f} {fixed.rmse:>12.6f}")
    print(f"{'regression':<12} {reg.max_abs_error:>12.6f} {reg.rmse:>12.6f}")
    return 0


def cmd_meter_run(args):
    v, i, period = frontend.read_samples_csv(args.samples)
    register = None
    if args.register:
        register = EnergyRegister(args.register, args.policy, args.delta)
    meter = Meter(_channel_config(args), _converter(args), register=register)
    results = meter.run(split_windows(v, i, period, args.window), log_path=args.log)

    sched = tariff.load_schedule(args.schedule) if args.schedule else None
    if args.frames:
        with open(args.frames, "wb") as fh:
            for m, state in results:
                dr = tariff.dr_status(state.energy / 1000, sched).state if sched else 0
                t = args.timestamp + int(state.last_update * 3600)
                frame = MeterFrame.from_readings(args.meter_id, t, m.v_rms, m.i_rms, m.p, m.s,
                                                 m.pf, state.energy, int(dr))
                fh.write(pack_stream(encode(frame)))
    last = results[-1][0]
    pf = "undefined" if last.pf is None else f"{last.pf:.4f}"
    print(f"windows {len(results)}  Vrms {last.v_rms:.3f} V  Irms {last.i_rms:.4f} A  "
          f"P {last.p:.3f} W  S {last.s:.3f} VA  PF {pf}")
    print(f"energy {meter.state.energy:.6f} Wh")
    if sched is not None:
        print(f"dr-status {tariff.dr_status(meter.state.energy / 1000, sched)}")
    return 0


def cmd_compare(args):
    if args.from_csv:
        v, i, period = frontend.read_samples_csv(args.from_csv)
        truth = None
    else:
        sim = _run_simulation(args)
        v, i, period = sim.v_counts, sim.i_counts, sim.sample_period_us
        truth = sim.true_energy_wh()
    model = calibration.load_model(args.model) if args.model else ACS712_CUBIC
    report = compare_runs(v, i, period, model, _channel_config(args), args.window,
                          args.sensitivity, truth, args.days)
    print(report.table())
    return 0


def cmd_bill(args):
    sched = _schedule(args)
    items = tariff.itemize(args.units, sched)
    print(f"{'block':<16} {'units':>12} {'rate':>8} {'amount':>12}")
    for it in items:
        upper = "inf" if it.upper is None else str(it.upper)
        print(f"{f'{it.lower}-{upper}':<16} {str(it.units):>12} {str(it.rate):>8} "
              f"{str(it.amount.quantize(sched.minor_unit)):>12}")
    print(f"{'total':<16} {str(args.units):>12} {'':>8} {str(tariff.bill(args.units, sched)):>12}")
    return 0


def cmd_dr_status(args):
    print(tariff.dr_status(args.units, _schedule(args)))
    return 0


def cmd_project(args):
    print(project_monthly(args.wh_5min, args.days))
    return 0


def cmd_frame_encode(args):
    frame = MeterFrame(args.meter_id, args.timestamp, args.v_rms, args.i_rms, args.p, args.s,
                       args.pf_scaled, args.energy, args.dr_flag)
    print(encode(frame).hex())
    return 0


def cmd_frame_decode(args):
    if args.hex is not None:
        try:
            data = bytes.fromhex(args.hex)
        except ValueError:
            raise MeterError(f"not a hex string: {args.hex!r}") from None
    else:
        with open(args.file, "rb") as fh:
            data = fh.read()
    print(json.dumps(decode(data).to_dict()))
    return 0


def cmd_collect(args):
    collector = Collector(args.log_dir)
    try:
        if args.input:
            collector.ingest_file(args.input)
        else:
            host, port = collector.serve(*args.listen)
            print(f"listening on {host}:{port}", flush=True)
            stop = threading.Event()
            for sig in (signal.SIGINT, signal.SIGTERM):
                signal.signal(sig, lambda *_: stop.set())
            stop.wait()
    finally:
        collector.close()
    print(json.dumps(collector.summary()))
    return 0


# ---------------------------------------------------------------- parser

def _add_channel_flags(p):
    p.add_argument("--window", type=_positive_int, default=metering.DEFAULT_WINDOW,
                   help="samples per metering window (default 200)")
    p.add_argument("--v-gain", type=_positive_float, default=150.0,
                   help="mains volts per ADC-pin volt (default 150)")
    p.add_argument("--offset-mode", choices=("mean", "fixed"), default="mean",
                   help="dc offset removal: window mean or fixed volts (default mean)")
    p.add_argument("--v-offset", type=float, default=2.5, help="fixed voltage-channel offset, V")
    p.add_argument("--i-offset", type=float, default=2.5, help="fixed current-channel offset, V")
    p.add_argument("--threshold", type=_non_negative_float, default=0.02,
                   help="zero-current deadband in A (default 0.02)")
    p.add_argument("--sensitivity", type=_positive_float, default=0.1,
                   help="fixed sensor sensitivity in V/A (default 0.1)")


def _add_sim_flags(p, required=True):
    p.add_argument("--scenario", default="type-a",
                   help="preset (type-a, type-b, quadrature) or scenario JSON path")
    p.add_argument("--irms", type=_non_negative_float, required=required, default=8.0,
                   help="target RMS load current, A")
    dur = p.add_mutually_exclusive_group()
    dur.add_argument("--minutes", type=_positive_float, default=5.0, help="duration (default 5)")
    dur.add_argument("--samples", dest="samples", type=_positive_int, default=None,
                     help="explicit sample count instead of --minutes")
    p.add_argument("--period-us", type=_positive_float, default=frontend.DEFAULT_PERIOD_US,
                   help="ADC sample period in microseconds (default 100)")
    p.add_argument("--sensor", choices=("ideal", "polynomial-truth"), default=None,
                   help="override the scenario's sensor model")
    p.add_argument("--decimate", type=_positive_int, default=1, help="keep every Nth sample")
    p.add_argument("--noise", type=_non_negative_float, default=0.0,
                   help="Gaussian noise on both ADC pins, V RMS")
    p.add_argument("--seed", type=int, default=None, help="RNG seed for --noise")


def _add_schedule_flags(p):
    p.add_argument("--units", type=_decimal, required=True, help="consumption in kWh")
    p.add_argument("--schedule", help="tariff schedule JSON")
    p.add_argument("--boundaries", type=_decimal_list, help="comma separated, e.g. 100,200")
    p.add_argument("--rates", type=_decimal_list, help="comma separated, e.g. 1,2,3")
    p.add_argument("--mode", choices=tariff.MODES, default=None, help="default telescopic")
    p.add_argument("--margin", type=_decimal, default=None, help="warning margin (default 0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regmeter",
                                     description="Single-phase smart energy meter emulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a scenario into a sample CSV")
    _add_sim_flags(p)
    p.add_argument("--out", required=True, help="output sample CSV")
    p.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="fit or evaluate a calibration polynomial")
    calsub = cal.add_subparsers(dest="action", required=True)
    p = calsub.add_parser("sweep", help="generate training pairs from the truth sensor")
    p.add_argument("--scenario", default="type-a")
    p.add_argument("--points", type=_positive_int, default=20)
    p.add_argument("--min", type=_non_negative_float, default=0.5, help="lowest current, A")
    p.add_argument("--max", type=_positive_float, default=8.0, help="highest current, A")
    p.add_argument("--window", type=_positive_int, default=metering.DEFAULT_WINDOW)
    p.add_argument("--period-us", type=_positive_float, default=frontend.DEFAULT_PERIOD_US)
    p.add_argument("--noise", type=_non_negative_float, default=0.0,
                   help="Gaussian noise on measured sensor volts")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="training CSV (sensor_volts,ref_amps)")
    p.set_defaults(func=cmd_calibrate_sweep)
    p = calsub.add_parser("fit", help="least-squares fit from a training CSV")
    p.add_argument("--train", required=True, help="CSV with header sensor_volts,ref_amps")
    p.add_argument("--degree", type=_positive_int, default=3)
    p.add_argument("--out", help="model JSON to write")
    p.set_defaults(func=cmd_calibrate_fit)
    p = calsub.add_parser("eval", help="evaluate a model at points or against a test CSV")
    p.add_argument("--model", help="model JSON (default: built-in ACS712 cubic)")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--x", type=float, action="append", help="sensor volts, repeatable")
    what.add_argument("--test", help="test CSV; prints fixed vs regression error report")
    p.add_argument("--sensitivity", type=_positive_float, default=0.1)
    p.set_defaults(func=cmd_calibrate_eval)

    met = sub.add_parser("meter", help="run the metering loop over a sample CSV")
    metsub = met.add_subparsers(dest="action", required=True)
    p = metsub.add_parser("run", help="meter a capture")
    p.add_argument("--samples", required=True, help="sample CSV")
    conv = p.add_mutually_exclusive_group()
    conv.add_argument("--model", help="calibration model JSON (default: built-in cubic)")
    conv.add_argument("--no-regression", action="store_true",
                      help="use fixed sensitivity instead of a calibration model")
    _add_channel_flags(p)
    p.add_argument("--register", help="energy register file (created if absent)")
    p.add_argument("--policy", choices=("every-window", "min-delta"), default="every-window")
    p.add_argument("--delta", type=_non_negative_float, default=0.0,
                   help="min-delta write threshold, Wh")
    p.add_argument("--log", help="per-window measurement CSV")
    p.add_argument("--frames", help="write length-prefixed AMR frames here")
    p.add_argument("--meter-id", type=int, default=1)
    p.add_argument("--timestamp", type=int, default=0, help="timestamp of the first frame, s")
    p.add_argument("--schedule", help="tariff JSON, enables DR status in frames")
    p.set_defaults(func=cmd_meter_run)

    p = sub.add_parser("compare", help="energy with and without regression, Table-IV style")
    p.add_argument("--from-csv", help="meter an existing sample CSV instead of simulating")
    _add_sim_flags(p, required=False)
    p.add_argument("--model", help="calibration model JSON (default: built-in cubic)")
    p.add_argument("--days", type=_positive_int, default=31)
    _add_channel_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bill", help="block-rate bill with per-block breakdown")
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_bill)

    p = sub.add_parser("dr-status", help="demand-response status for cumulative consumption")
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_dr_status)

    p = sub.add_parser("project", help="31-day projection of a 5-minute energy reading")
    p.add_argument("--wh-5min", type=_decimal, required=True)
    p.add_argument("--days", type=_positive_int, default=31)
    p.set_defaults(func=cmd_project)

    fr = sub.add_parser("frame", help="encode or decode AMR frames")
    frsub = fr.add_subparsers(dest="action", required=True)
    p = frsub.add_parser("encode", help="print a frame as hex")
    p.add_argument("--meter-id", type=int, required=True)
    p.add_argument("--timestamp", type=int, default=0)
    p.add_argument("--v-rms", type=int, default=0, help="mV")
    p.add_argument("--i-rms", type=int, default=0, help="mA")
    p.add_argument("--p", type=int, default=0, help="mW")
    p.add_argument("--s", type=int, default=0, help="mVA")
    p.add_argument("--pf-scaled", type=int, default=0, help="PF x 10000")
    p.add_argument("--energy", type=int, default=0, help="mWh")
    p.add_argument("--dr-flag", type=int, default=0, choices=(0, 1, 2))
    p.set_defaults(func=cmd_frame_encode)
    p = frsub.add_parser("decode", help="decode one frame to JSON")
    data = p.add_mutually_exclusive_group(required=True)
    data.add_argument("--hex", help="frame bytes as hex")
    data.add_argument("--file", help="raw frame file")
    p.set_defaults(func=cmd_frame_decode)

    p = sub.add_parser("collect", help="head-end collector")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--listen", type=_endpoint, help="host:port to accept meter connections")
    src.add_argument("--input", help="file of length-prefixed frames")
    p.add_argument("--log-dir", required=True, help="directory for per-meter logs")
    p.set_defaults(func=cmd_collect)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("REGMETER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MeterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
