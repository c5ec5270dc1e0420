"""Command-line surface.

Subcommands: simulate, psd, fit, calibrate, sweep, compare. All
machine-readable output is canonical JSON (sorted keys, fixed layout), so
a run with fixed inputs and seed is byte-reproducible; timestamps only
appear if --stamp is given. Exit codes: 0 success, 1 numerical failure,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

from .errors import InputError, NumericalError, TrapcalError
from .fitting import FitResult, compare_models, wls_fit
from .models import ModelKind, ModelSpec
from .pipelines import CalibrationConfig, CalibrationReport, Method, calibrate, power_sweep
from .signals import load_recording, save_recording
from .simulator import Scenario
from .spectral import band_mask, bartlett_psd, load_spectrum, save_spectrum

__all__ = ["main"]


def _write_json(payload: dict, path: str | None, stamp: bool) -> None:
    if stamp:
        payload = dict(payload)
        payload["created_at"] = datetime.now(timezone.utc).isoformat()
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _parse_channels(spec: str) -> dict[str, int]:
    out = {}
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, col = item.partition("=")
        if not col:
            raise InputError(f"bad --channels entry {item!r}; expected NAME=COL")
        try:
            out[name.strip()] = int(col)
        except ValueError:
            raise InputError(f"bad column index in --channels entry {item!r}") from None
    if not out:
        raise InputError("--channels parsed to an empty schema")
    return out


def _load_rec(path: str, channels: str, rate_hz: float):
    return load_recording(path, _parse_channels(channels), rate_hz)


def cmd_simulate(args) -> int:
    scenario = Scenario.from_json(args.scenario)
    if args.seed is not None:
        scenario = Scenario.from_dict({**scenario.to_dict(), "seed": args.seed})
    recording = scenario.run()
    save_recording(recording, args.output)
    truth = {
        "scenario": scenario.to_dict(),
        "fc_hz": scenario.radial.fc_hz,
        "diffusion": scenario.radial.diffusion,
        "axial_fc_hz": None if scenario.axial is None else scenario.axial.fc_hz,
        "alpha_x": scenario.detector.alpha_x,
        "alpha_s": scenario.detector.alpha_s,
        "alpha_0": scenario.detector.alpha_0,
        "alpha_knife_x": scenario.detector.alpha_knife_x,
        "seed": scenario.seed,
        "channels": {"X": 0, "S": 1, "Xk": 2},
        "output": args.output,
    }
    _write_json(truth, args.output + ".truth.json", args.stamp)
    return 0


def cmd_psd(args) -> int:
    recording = _load_rec(args.input, args.channels, args.rate_hz)
    if args.channel not in recording:
        raise InputError(f"channel {args.channel!r} not in schema")
    spectrum = bartlett_psd(recording[args.channel], args.blocks)
    if args.fmin_hz is not None or args.fmax_hz is not None:
        spectrum = band_mask(
            spectrum,
            args.fmin_hz if args.fmin_hz is not None else spectrum.freqs_hz[0],
            args.fmax_hz if args.fmax_hz is not None else spectrum.freqs_hz[-1],
        )
    save_spectrum(spectrum, args.output)
    return 0


def cmd_fit(args) -> int:
    spectrum = load_spectrum(args.input)
    if args.fmin_hz is not None or args.fmax_hz is not None:
        spectrum = band_mask(
            spectrum,
            args.fmin_hz if args.fmin_hz is not None else spectrum.freqs_hz[0],
            args.fmax_hz if args.fmax_hz is not None else spectrum.freqs_hz[-1],
        )
    kind = ModelKind(args.model)
    dark = None
    if kind is ModelKind.AL_DARK:
        if args.dark is None:
            raise InputError("--dark spectrum file required for the al_dark model")
        dark = load_spectrum(args.dark)
        dark = band_mask(dark, spectrum.band[0], spectrum.band[1])
    model = ModelSpec(kind, sample_rate_hz=spectrum.source_rate_hz, dark=dark)
    fit = wls_fit(spectrum, model)
    _write_json(fit.to_dict(), args.output, args.stamp)
    return 0


def _calibrate_config(args, method: Method) -> CalibrationConfig:
    return CalibrationConfig(
        method=method,
        n_blocks=args.blocks,
        f_min_hz=args.fmin_hz,
        f_max_hz=args.fmax_hz,
        dark_n_blocks=args.dark_blocks,
        weight_refine=not args.no_refine,
        allow_experimental=args.experimental_single_channel,
    )


def _run_calibration(args, path: str, power_mw: float | None) -> CalibrationReport:
    method = Method(args.method)
    recording = _load_rec(path, args.channels, args.rate_hz)
    dark = None
    if method is Method.NOISE:
        if args.dark is None:
            raise InputError("dark recording required: pass --dark for method=noise")
        dark = _load_rec(args.dark, args.channels, args.rate_hz)
    report = calibrate(recording, _calibrate_config(args, method), dark)
    if power_mw is not None:
        report = dataclasses.replace(report, power_mw=float(power_mw))
    report.provenance["input"] = path
    return report


def cmd_calibrate(args) -> int:
    report = _run_calibration(args, args.input, args.power_mw)
    _write_json(report.to_dict(), args.output, args.stamp)
    return 0


def _split_sweep_input(item: str) -> tuple[str, float | None]:
    path, sep, power = item.rpartition(":")
    if sep and path:
        try:
            return path, float(power)
        except ValueError:
            pass
    return item, None


def cmd_sweep(args) -> int:
    inputs = args.inputs
    if all(p.endswith(".json") for p in inputs):
        reports = [CalibrationReport.from_dict(_read_json(p)) for p in inputs]
    else:
        jobs = max(1, args.jobs)
        entries = [_split_sweep_input(p) for p in inputs]
        for path, power in entries:
            if power is None:
                raise InputError(
                    f"sweep recording {path!r} needs a power label: PATH:POWER_MW"
                )
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_calibration, args, path, power)
                for path, power in entries
            ]
            reports = [f.result() for f in futures]
    sweep = power_sweep(reports)
    _write_json(sweep.to_dict(), args.output, args.stamp)
    return 0


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _fit_from_file(path: str) -> FitResult:
    data = _read_json(path)
    if "fit" in data:  # calibration report
        return FitResult.from_dict(data["fit"])
    return FitResult.from_dict(data)


def cmd_compare(args) -> int:
    fit_a = _fit_from_file(args.fit_a)
    fit_b = _fit_from_file(args.fit_b)
    labels = (args.labels.split(",") + ["a", "b"])[:2] if args.labels else ("a", "b")
    comparison = compare_models(fit_a, fit_b, tuple(labels))
    _write_json(comparison.to_dict(), args.output, args.stamp)
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", "-o", default="-", help="output path ('-' = stdout)")
    p.add_argument("--stamp", action="store_true",
                   help="include a created_at timestamp in the JSON output")


def _add_recording_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channels", default="X=0,S=1,Xk=2",
                   help="channel schema NAME=COL[,NAME=COL...]")
    p.add_argument("--rate-hz", type=float, required=True, help="sample rate in Hz")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapcal",
        description="Optical-tweezer corner-frequency calibration from "
                    "forward-scattering power spectra.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a recording from a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON path")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--output", "-o", required=True, help="recording CSV path")
    p.add_argument("--stamp", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("psd", help="Bartlett PSD of one channel")
    p.add_argument("--input", "-i", required=True)
    _add_recording_args(p)
    p.add_argument("--channel", default="X")
    p.add_argument("--blocks", type=int, default=64)
    p.add_argument("--fmin-hz", type=float, default=None)
    p.add_argument("--fmax-hz", type=float, default=None)
    p.add_argument("--output", "-o", required=True, help="spectrum dump path")
    p.add_argument("--stamp", action="store_true")
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("fit", help="fit a spectral model to a spectrum dump")
    p.add_argument("--input", "-i", required=True, help="spectrum dump path")
    p.add_argument("--model", default="al_const",
                   choices=[k.value for k in ModelKind])
    p.add_argument("--dark", default=None, help="dark spectrum dump (al_dark)")
    p.add_argument("--fmin-hz", type=float, default=None)
    p.add_argument("--fmax-hz", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", help="recording -> corner-frequency report")
    p.add_argument("--input", "-i", required=True)
    _add_recording_args(p)
    p.add_argument("--method", default="mean",
                   choices=[m.value for m in Method])
    p.add_argument("--blocks", type=int, default=64)
    p.add_argument("--fmin-hz", type=float, default=None)
    p.add_argument("--fmax-hz", type=float, default=None)
    p.add_argument("--dark", default=None, help="dark recording CSV (method=noise)")
    p.add_argument("--dark-blocks", type=int, default=None,
                   help="blocks for the dark PSD (default: same as --blocks)")
    p.add_argument("--power-mw", type=float, default=None,
                   help="trap power label for the report")
    p.add_argument("--no-refine", action="store_true",
                   help="skip the model-weight refinement pass")
    p.add_argument("--experimental-single-channel", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="corner frequency vs power, line through origin")
    p.add_argument("inputs", nargs="+",
                   help="report JSONs, or recording CSVs as PATH:POWER_MW")
    p.add_argument("--channels", default="X=0,S=1,Xk=2")
    p.add_argument("--rate-hz", type=float, default=None)
    p.add_argument("--method", default="mean", choices=[m.value for m in Method])
    p.add_argument("--blocks", type=int, default=64)
    p.add_argument("--fmin-hz", type=float, default=None)
    p.add_argument("--fmax-hz", type=float, default=None)
    p.add_argument("--dark", default=None)
    p.add_argument("--dark-blocks", type=int, default=None)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--experimental-single-channel", action="store_true")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker threads when calibrating recordings")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="chi^2 ratio between two fit JSONs")
    p.add_argument("fit_a")
    p.add_argument("fit_b")
    p.add_argument("--labels", default=None, help="comma-separated labels")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "sweep" and not all(
        p.endswith(".json") for p in args.inputs
    ):
        if args.rate_hz is None:
            parser.error("--rate-hz is required when sweeping over recordings")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, TrapcalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
