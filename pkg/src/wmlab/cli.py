"""Command-line front end.

    wmlab <inspect|design|simulate|freqresp|oog> --scenario FILE [options]

Every command loads one scenario file, runs a pipeline, and writes its
reports into --out.  All numbers are printed with 17 significant digits so
re-runs are byte-identical.  Exit codes: 0 success, 2 scenario/usage error,
3 infeasible or unbounded verdict (report still written), 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import attacks, design, oog, statespace
from .scenario import Scenario, ScenarioParseError, load_scenario, pair_from_dict
from .systems import assemble_watermarked, identity_pair

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

VARIANTS = ("none", "initial", "optimized")


# -- deterministic serialization ------------------------------------------


def _fmt(v: float) -> str:
    return "%.17g" % float(v)


def _jsonify(obj):
    """Render with floats at 17 significant digits; non-finite become null."""
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(str(k))}: {_jsonify(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_jsonify(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, complex):
        return _jsonify([obj.real, obj.imag])
    if obj is None:
        return "null"
    return json.dumps(obj)


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _write_json(out_dir: str, name: str, payload: dict) -> str:
    return _write(out_dir, name, _jsonify(payload) + "\n")


# -- variant plumbing -------------------------------------------------------


def _variant_pairs(scenario: Scenario, variant: str, out_dir: str):
    if variant == "none":
        return identity_pair(scenario.plant.m), identity_pair(scenario.plant.p)
    if variant == "initial":
        return scenario.input_pair, scenario.output_pair
    path = os.path.join(out_dir, "design_report.json")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError:
        raise ScenarioParseError(
            f"variant 'optimized' needs {path}; run `wmlab design` first"
        ) from None
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path} is not valid JSON: {exc.msg}") from None
    try:
        return pair_from_dict(doc["input_pair"]), pair_from_dict(doc["output_pair"])
    except (KeyError, ValueError) as exc:
        raise ScenarioParseError(f"{path} has no usable watermark pairs: {exc}") from None


def _assembled(scenario: Scenario, variant: str, out_dir: str):
    pin, pout = _variant_pairs(scenario, variant, out_dir)
    loop = assemble_watermarked(scenario.plant, scenario.controller,
                                pin, pout, covert=scenario.embed_replica)
    return loop, pin, pout


def _complex_list(values) -> list:
    return [[float(v.real), float(v.imag)] for v in np.atleast_1d(values)]


# -- commands ----------------------------------------------------------------


def cmd_inspect(scenario: Scenario, out_dir: str) -> int:
    """Structural report on the plant: poles, zeros, rank conditions, and
    whether unstable invariant zeros cap the achievable detection gain."""
    plant = scenario.plant
    meas = statespace.make_statespace(
        plant.A, plant.B, plant.C_meas, np.zeros((plant.p, plant.m)))
    perf = statespace.make_statespace(
        plant.A, plant.B, plant.C_perf, np.zeros((plant.C_perf.shape[0], plant.m)))
    poles = statespace.poles(meas)
    meas_zeros = statespace.zeros(meas)
    perf_zeros = statespace.zeros(perf)
    unstable = [z for z in meas_zeros if abs(z) >= 1.0]
    warnings = []
    if unstable:
        warnings.append(
            "plant has unstable invariant zeros at "
            + ", ".join("%.6g%+.6gj" % (z.real, z.imag) for z in unstable)
            + ": attacks hidden behind them keep a bounded gain for every watermark")
    report = {
        "name": scenario.name,
        "dimensions": {"n": plant.n, "m": plant.m, "p": plant.p},
        "poles": _complex_list(poles),
        "plant_stable": bool(np.all(np.abs(poles) < 1.0)),
        "controllable": statespace.is_controllable(plant.A, plant.B),
        "observable": statespace.is_observable(plant.C_meas, plant.A),
        "measured_channel_zeros": _complex_list(meas_zeros),
        "performance_channel_zeros": _complex_list(perf_zeros),
        "unstable_zero_limitation": {
            "applies": bool(unstable),
            "unstable_zeros": _complex_list(unstable),
        },
        "warnings": warnings,
    }
    _write_json(out_dir, "inspect.json", report)
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    return EXIT_OK


def cmd_design(scenario: Scenario, out_dir: str) -> int:
    """Run the alternating gain minimization and persist its report."""
    report = design.run_algorithm1(
        scenario.plant, scenario.controller,
        scenario.input_pair, scenario.output_pair, scenario.design)
    _write_json(out_dir, "design_report.json", report.to_dict())
    _write(out_dir, "gamma_trace.csv", report.trace_csv())
    print(f"design: {report.termination.value} after {report.iterations} "
          f"iteration(s), gamma = {_fmt(report.gamma) if math.isfinite(report.gamma) else 'inf'}")
    if report.termination is design.Termination.INFEASIBLE_AT_INIT:
        return EXIT_INFEASIBLE
    if report.termination is design.Termination.STEP_FAILURE:
        return EXIT_NUMERICAL
    return EXIT_OK


def _energies_payload(out_dir: str) -> dict:
    path = os.path.join(out_dir, "energies.json")
    if os.path.exists(path):
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError):
            pass
    return {"variants": {}}


def _normalized_cumulative(signal: np.ndarray) -> list[float]:
    steps = np.sum(np.atleast_2d(signal) ** 2, axis=1)
    cum = np.cumsum(steps)
    total = cum[-1]
    if total <= 0.0:
        return [0.0] * len(cum)
    return [float(v) for v in cum / total]


def cmd_simulate(scenario: Scenario, out_dir: str, variant: str) -> int:
    """Simulate the attacked loop and record trajectories and energies."""
    if scenario.attack is None:
        raise ScenarioParseError("scenario has no attack section to simulate")
    loop, _, _ = _assembled(scenario, variant, out_dir)
    result = attacks.simulate(loop, scenario.attack, scenario.horizon,
                              plant=scenario.plant)
    _write(out_dir, f"sim_{variant}.csv", attacks.sim_to_csv(result))

    payload = _energies_payload(out_dir)
    payload["theta_r"] = scenario.theta_r
    e_r = attacks.energy(result.y_r)
    e_J = attacks.energy(result.y_J)
    payload["variants"][variant] = {
        "energy_y_r": e_r,
        "energy_y_J": e_J,
        "detected": attacks.detect(result.y_r, scenario.theta_r),
        "diverged": result.diverged,
        "normalized_cumulative_y_r": _normalized_cumulative(result.y_r),
        "normalized_cumulative_y_J": _normalized_cumulative(result.y_J),
    }
    have = payload["variants"]
    if "initial" in have and "optimized" in have:
        init, opt = have["initial"], have["optimized"]
        payload["ratios"] = {
            "y_r_optimized_over_initial": (
                opt["energy_y_r"] / init["energy_y_r"]
                if init["energy_y_r"] > 0 else None),
            "y_J_optimized_over_initial": (
                opt["energy_y_J"] / init["energy_y_J"]
                if init["energy_y_J"] > 0 else None),
        }
    _write_json(out_dir, "energies.json", payload)
    print(f"simulate[{variant}]: energy(y_r) = {_fmt(e_r)}, "
          f"energy(y_J) = {_fmt(e_J)} over N = {scenario.horizon}")
    return EXIT_OK


_CHANNELS = {"residual": 1, "performance": 2}


def cmd_freqresp(scenario: Scenario, out_dir: str, variant: str,
                 channel: str) -> int:
    """Singular-value sweep of the attack-to-output channels."""
    loop, _, _ = _assembled(scenario, variant, out_dir)
    grid = statespace.FrequencyGrid.default(scenario.sample_period,
                                            scenario.grid_points)
    wanted = _CHANNELS if channel == "both" else {channel: _CHANNELS[channel]}
    for name in wanted:
        C, D = (loop.C1, loop.D1) if name == "residual" else (loop.C2, loop.D2)
        sub = statespace.make_statespace(loop.ss.A, loop.ss.B, C, D)
        sv = statespace.sv_sweep(sub, grid)
        header = "omega_rad_s, " + ", ".join(
            f"sigma_{i + 1}" for i in range(sv.shape[1]))
        lines = [header]
        for w, row in zip(grid.omegas, sv):
            lines.append(", ".join([_fmt(w)] + [_fmt(v) for v in row]))
        _write(out_dir, f"freqresp_{name}_{variant}.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_oog(scenario: Scenario, out_dir: str, variant: str) -> int:
    """Output-to-output gain of the assembled loop, verdict and certificate."""
    loop, _, _ = _assembled(scenario, variant, out_dir)
    cert = oog.compute_oog(loop)
    _write_json(out_dir, f"oog_{variant}.json", cert.to_dict())
    print(f"oog[{variant}]: {cert.status.value}"
          + (f", gamma = {_fmt(cert.gamma)}" if math.isfinite(cert.gamma) else ""))
    if cert.status in (oog.OogStatus.UNBOUNDED, oog.OogStatus.INFEASIBLE):
        return EXIT_INFEASIBLE
    if cert.status is oog.OogStatus.NUMERICAL_FAILURE:
        return EXIT_NUMERICAL
    return EXIT_OK


# -- argument plumbing -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmlab",
        description="Watermark design and analysis for attacked control loops")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=False):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        if variant:
            p.add_argument("--variant", choices=VARIANTS, default="initial",
                           help="which watermark pairs to use")

    common(sub.add_parser("inspect", help="structural plant report"))
    common(sub.add_parser("design", help="run the gain minimization"))
    common(sub.add_parser("simulate", help="time-domain attack simulation"),
           variant=True)
    fr = sub.add_parser("freqresp", help="singular-value frequency sweep")
    common(fr, variant=True)
    fr.add_argument("--channel", choices=("residual", "performance", "both"),
                    default="both")
    common(sub.add_parser("oog", help="output-to-output gain certificate"),
           variant=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.command == "inspect":
            return cmd_inspect(scenario, args.out)
        if args.command == "design":
            return cmd_design(scenario, args.out)
        if args.command == "simulate":
            return cmd_simulate(scenario, args.out, args.variant)
        if args.command == "freqresp":
            return cmd_freqresp(scenario, args.out, args.variant, args.channel)
        return cmd_oog(scenario, args.out, args.variant)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (design.StepInfeasible, design.UnstableGeneratorProduced) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
