"""Command-line entry point: ``lamepose {simulate,localize,db-validate,export-cdf}``.

Exit codes (one per error class, stable across releases):

==  ==========================================================
0   success
1   unexpected internal error
2   observation references an LED id missing from the database
3   fewer than two observed LEDs
4   malformed or unreadable input document
5   invalid configuration value or override
6   pose sampling could not satisfy the scenario
7   more than 5% of Monte Carlo trials failed
8   refinement diverged
9   degenerate geometry (initializer or back-projection failed)
==  ==========================================================
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import database
from .camera import camera_center
from .estimator import LamePoseEstimator
from .exceptions import (
    BehindCameraError,
    DatabaseError,
    DegenerateConfigurationError,
    GeometryError,
    InfeasibleInitializerError,
    InfeasibleScenarioError,
    InsufficientObservationsError,
    NegativeDepthError,
    ParallelRayError,
    RefinementDivergedError,
    SimulationAbortedError,
    UnknownLedError,
)
from .scene import Scene, load_observations
from .simulation import (
    SCENARIO_SHAPES,
    ScenarioConfig,
    empirical_cdf,
    run_monte_carlo,
    scenario_preset,
    summary_json,
    trials_csv,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_UNKNOWN_ID = 2
EXIT_INSUFFICIENT = 3
EXIT_BAD_INPUT = 4
EXIT_BAD_CONFIG = 5
EXIT_INFEASIBLE_SCENARIO = 6
EXIT_ABORTED = 7
EXIT_DIVERGED = 8
EXIT_DEGENERATE = 9

# checked in order, so subclasses come before their bases
_EXIT_CODES = [
    (UnknownLedError, EXIT_UNKNOWN_ID),
    (InsufficientObservationsError, EXIT_INSUFFICIENT),
    (DatabaseError, EXIT_BAD_INPUT),
    (InfeasibleScenarioError, EXIT_INFEASIBLE_SCENARIO),
    (SimulationAbortedError, EXIT_ABORTED),
    (RefinementDivergedError, EXIT_DIVERGED),
    ((DegenerateConfigurationError, InfeasibleInitializerError, ParallelRayError,
      NegativeDepthError, BehindCameraError), EXIT_DEGENERATE),
    (GeometryError, EXIT_BAD_CONFIG),
]

_FLAG_KEYS = {
    "trials": "trials",
    "seed": "seed",
    "noise_std": "noise_std",
    "led_scale": "led_scale",
    "sampling_ratio": "sampling_ratio",
    "samples_per_led": "samples_per_led",
}


class InputError(Exception):
    """Unreadable or malformed CLI input."""


class ConfigError(Exception):
    """Bad configuration key or value."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InputError):
        return EXIT_BAD_INPUT
    if isinstance(exc, ConfigError):
        return EXIT_BAD_CONFIG
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return EXIT_INTERNAL


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` assignment in place; values parse as JSON when possible."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            raise ConfigError(f"override {key!r}: {part!r} is not a config section")
        node = child
    if parts[-1] not in node:
        raise ConfigError(f"override {key!r}: unknown config field")
    node[parts[-1]] = _parse_value(value)


def build_config(args) -> ScenarioConfig:
    if args.config:
        doc = _read_json(args.config)
        if not isinstance(doc, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        if "leds" not in doc and "scenario" not in doc:
            doc["scenario"] = args.scenario
    else:
        doc = {"scenario": args.scenario}
    try:
        doc = ScenarioConfig.from_dict(doc).to_dict()
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from None
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            doc[key] = value
    for assignment in args.set or []:
        apply_override(doc, assignment)
    try:
        return ScenarioConfig.from_dict(doc)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from None


def cmd_simulate(args) -> int:
    config = build_config(args)
    print(json.dumps(config.to_dict(), sort_keys=True))
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    result = run_monte_carlo(config, workers=max(1, workers))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.csv").write_text(trials_csv(result.trials))
    (out / "summary.json").write_text(summary_json(result))
    s = result.summary
    print(f"{s.succeeded}/{s.trials} trials ok  MPE {s.mpe * 100:.3f} cm  MRE {s.mre:.4f} deg")
    return EXIT_OK


def cmd_localize(args) -> int:
    try:
        db = database.load(args.db)
    except OSError as exc:
        raise InputError(f"cannot read {args.db}: {exc.strerror}") from None
    try:
        K, observations, ref_points = load_observations(args.obs, db.z0)
    except OSError as exc:
        raise InputError(f"cannot read {args.obs}: {exc.strerror}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.obs}: {exc}") from None
    scene = Scene.from_database(db, K, observations, ref_points or None)
    estimator = LamePoseEstimator(samples_per_led=args.samples_per_led,
                                  sampling_ratio=args.sampling_ratio).fit()
    pose, diag = estimator.localize(scene)
    doc = {
        "position_m": camera_center(pose).tolist(),
        "rodrigues": np.asarray(pose.omega).tolist(),
        "rotation_matrix": pose.rotation.tolist(),
        "diagnostics": diag.to_dict(),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_db_validate(args) -> int:
    try:
        db = database.load(args.db)
    except OSError as exc:
        raise InputError(f"cannot read {args.db}: {exc.strerror}") from None
    print(f"ok: {len(db.records)} LEDs, {len(db.ref_points)} reference points, z0 = {db.z0} m")
    return EXIT_OK


def read_trials(path) -> tuple[list[float], list[float]]:
    """Position and rotation errors of the successful rows of a trials file."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    ep, er = [], []
    for n, row in enumerate(rows, start=2):
        try:
            if row["status"] != "ok":
                continue
            p, r = float(row["ep_m"]), float(row["er_deg"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{path}: malformed row {n}") from None
        if not (math.isfinite(p) and math.isfinite(r)):
            raise InputError(f"{path}: non-finite error on row {n}")
        ep.append(p)
        er.append(r)
    if not ep:
        raise InputError(f"{path}: no successful trials")
    return ep, er


def cdf_csv(ep, er) -> str:
    lines = ["metric,error,cumulative_fraction"]
    for name, values in (("ep_m", ep), ("er_deg", er)):
        lines.extend(f"{name},{v!r},{f!r}" for v, f in empirical_cdf(values))
    return "\n".join(lines) + "\n"


def cmd_export_cdf(args) -> int:
    ep, er = read_trials(args.trials_csv)
    Path(args.out_csv).write_text(cdf_csv(ep, er))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lamepose", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("--config", help="JSON scenario config (defaults to the --scenario preset)")
    sim.add_argument("--scenario", default="A", choices=sorted(SCENARIO_SHAPES))
    sim.add_argument("--trials", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--noise-std", dest="noise_std", type=float)
    sim.add_argument("--led-scale", dest="led_scale", type=float)
    sim.add_argument("--sampling-ratio", dest="sampling_ratio", type=float)
    sim.add_argument("--samples-per-led", dest="samples_per_led", type=int)
    sim.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    sim.add_argument("--out", default="results", help="output directory")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="dotted config override, e.g. pose_sampler.max_tilt_deg=10")
    sim.set_defaults(func=cmd_simulate)

    loc = sub.add_parser("localize", help="estimate the pose for one observation file")
    loc.add_argument("db")
    loc.add_argument("obs")
    loc.add_argument("out", nargs="?", default="-", help="output JSON path (default: stdout)")
    loc.add_argument("--samples-per-led", dest="samples_per_led", type=int, default=12)
    loc.add_argument("--sampling-ratio", dest="sampling_ratio", type=float, default=1.0)
    loc.set_defaults(func=cmd_localize)

    val = sub.add_parser("db-validate", help="check an LED database file")
    val.add_argument("db")
    val.set_defaults(func=cmd_db_validate)

    cdf = sub.add_parser("export-cdf", help="empirical CDFs of a trials.csv")
    cdf.add_argument("trials_csv")
    cdf.add_argument("out_csv")
    cdf.set_defaults(func=cmd_export_cdf)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # every failure maps to a documented exit code
        code = exit_code_for(exc)
        if code == EXIT_INTERNAL:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
