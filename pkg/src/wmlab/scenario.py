"""Scenario files: one JSON document bundling plant, controller, watermark
filters, attack and run settings for the command-line pipelines.

A scenario is deliberately plain data -- matrices as nested lists, the attack
signal as a small spec (closed form, inline sequence, impulse, or a CSV
reference resolved relative to the scenario file).  Anything structurally
wrong raises ScenarioParseError with enough context to fix the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackScenario, attack_from_csv
from .design import DesignConfig
from .statespace import DimensionMismatch
from .systems import (
    Controller,
    Plant,
    WatermarkPair,
    make_controller,
    make_plant,
    make_watermark_pair,
)


class ScenarioParseError(ValueError):
    """Scenario file is unreadable, malformed, or internally inconsistent."""


@dataclass(frozen=True)
class Scenario:
    """Everything one command invocation needs, already validated.

    embed_replica selects the loop form used for gain analysis and design:
    True folds the covert attacker's plant copy into the state (single
    attack input), False leaves both injection points as free inputs.
    """

    plant: Plant
    controller: Controller
    input_pair: WatermarkPair
    output_pair: WatermarkPair
    attack: AttackScenario | None
    horizon: int
    design: DesignConfig = field(default_factory=DesignConfig)
    sample_period: float = 0.1
    theta_r: float = 1.0
    embed_replica: bool = True
    grid_points: int = 512
    name: str = ""


def _require(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise ScenarioParseError(f"{ctx}: missing required key {key!r}")
    return doc[key]


def _matrix(doc: dict, key: str, ctx: str) -> np.ndarray:
    val = _require(doc, key, ctx)
    try:
        arr = np.atleast_2d(np.asarray(val, dtype=float))
    except (TypeError, ValueError):
        raise ScenarioParseError(f"{ctx}: {key!r} is not a numeric matrix") from None
    return arr


def _optional_matrix(doc: dict, key: str) -> np.ndarray | None:
    if doc.get(key) is None:
        return None
    return _matrix(doc, key, key)


def _mask(doc: dict, ctx: str) -> tuple[str, ...]:
    raw = doc.get("free", [])
    if not isinstance(raw, (list, tuple)):
        raise ScenarioParseError(f"{ctx}: 'free' must be a list of matrix names")
    for name in raw:
        if name not in ("A", "B"):
            raise ScenarioParseError(
                f"{ctx}: only 'A' and 'B' can be free, got {name!r}")
    return tuple(raw)


def _pair(doc: dict, ctx: str) -> WatermarkPair:
    return make_watermark_pair(
        _matrix(doc, "A", ctx), _matrix(doc, "B", ctx),
        _matrix(doc, "C", ctx), _matrix(doc, "D", ctx))


def pair_from_dict(doc: dict) -> WatermarkPair:
    """Rebuild a watermark pair from a design report's remover block."""
    rem = _require(doc, "remover", "watermark pair")
    return _pair(rem, "remover")


def _signal_from_spec(spec, horizon: int, channels: int, base_dir: str,
                      ctx: str) -> np.ndarray:
    """Materialize an attack signal spec as an (horizon+1, channels) array.

    Scalar-valued specs are broadcast across channels; explicit sequences
    may be scalars (single channel) or rows.
    """
    if isinstance(spec, (list, tuple)):
        spec = {"kind": "sequence", "values": spec}
    if not isinstance(spec, dict):
        raise ScenarioParseError(f"{ctx}: signal spec must be an object or a list")
    kind = spec.get("kind")
    k = np.arange(horizon + 1, dtype=float)
    if kind == "const_plus_sine":
        offset = float(spec.get("offset", 0.0))
        amplitude = float(spec.get("amplitude", 0.0))
        omega = float(spec.get("omega", 1.0))
        phase = float(spec.get("phase", 0.0))
        vals = offset + amplitude * np.sin(omega * k + phase)
        return np.tile(vals[:, None], (1, channels))
    if kind == "sequence":
        vals = np.atleast_2d(np.asarray(_require(spec, "values", ctx), dtype=float))
        if vals.shape[0] == 1 and vals.shape[1] > 1:
            vals = vals.T
        if vals.shape[1] == 1 and channels > 1:
            vals = np.tile(vals, (1, channels))
        if vals.shape[1] != channels:
            raise ScenarioParseError(
                f"{ctx}: sequence has {vals.shape[1]} channels, expected {channels}")
        return vals
    if kind == "impulse":
        at = int(spec.get("at", 0))
        if not 0 <= at <= horizon:
            raise ScenarioParseError(f"{ctx}: impulse index {at} outside [0, {horizon}]")
        out = np.zeros((horizon + 1, channels))
        out[at, :] = float(spec.get("magnitude", 1.0))
        return out
    if kind == "csv":
        path = os.path.join(base_dir, str(_require(spec, "path", ctx)))
        try:
            with open(path, encoding="utf-8") as fh:
                phi_u, _ = attack_from_csv(fh.read())
        except OSError as exc:
            raise ScenarioParseError(f"{ctx}: cannot read {path}: {exc}") from None
        except ValueError as exc:
            raise ScenarioParseError(f"{ctx}: {exc}") from None
        if phi_u.shape[1] != channels:
            raise ScenarioParseError(
                f"{ctx}: CSV has {phi_u.shape[1]} channels, expected {channels}")
        return phi_u
    raise ScenarioParseError(f"{ctx}: unknown signal kind {kind!r}")


def _attack(doc: dict | None, plant: Plant, horizon: int,
            base_dir: str) -> AttackScenario | None:
    if doc is None:
        return None
    kind = str(doc.get("kind", "Covert"))
    phi_u = _signal_from_spec(_require(doc, "phi_u", "attack"), horizon,
                              plant.m, base_dir, "attack.phi_u")
    phi_y = None
    if doc.get("phi_y") is not None:
        phi_y = _signal_from_spec(doc["phi_y"], horizon, plant.p,
                                  base_dir, "attack.phi_y")
    try:
        return AttackScenario(
            kind=kind, phi_u=phi_u, phi_y=phi_y,
            K_a=int(doc.get("onset", 0)), b=doc.get("base", 0.0))
    except ValueError as exc:
        raise ScenarioParseError(f"attack: {exc}") from None


def scenario_from_dict(doc: dict, base_dir: str = ".") -> Scenario:
    """Validate and assemble a scenario from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    try:
        plant = make_plant(
            _matrix(_require(doc, "plant", "scenario"), "A", "plant"),
            _matrix(doc["plant"], "B", "plant"),
            _matrix(doc["plant"], "C_meas", "plant"),
            _matrix(doc["plant"], "C_perf", "plant"))
        ctrl_doc = _require(doc, "controller", "scenario")
        controller = make_controller(
            _matrix(ctrl_doc, "K", "controller"),
            _matrix(ctrl_doc, "L", "controller"),
            _optional_matrix(ctrl_doc, "B_c"))
        wm = _require(doc, "watermark", "scenario")
        input_doc = _require(wm, "input", "watermark")
        output_doc = _require(wm, "output", "watermark")
        input_pair = _pair(input_doc, "watermark.input")
        output_pair = _pair(output_doc, "watermark.output")
    except ScenarioParseError:
        raise
    except (ValueError, DimensionMismatch) as exc:
        raise ScenarioParseError(str(exc)) from None

    horizon = int(doc.get("horizon", 300))
    if horizon < 1:
        raise ScenarioParseError("horizon must be at least 1")
    sample_period = float(doc.get("sample_period", 0.1))
    if not sample_period > 0:
        raise ScenarioParseError("sample_period must be positive")
    theta_r = float(doc.get("theta_r", 1.0))
    if not theta_r > 0:
        raise ScenarioParseError("theta_r must be positive")
    grid_points = int(doc.get("grid_points", 512))
    if grid_points < 2:
        raise ScenarioParseError("grid_points must be at least 2")

    design_doc = doc.get("design", {})
    try:
        design = DesignConfig(
            epsilon=float(design_doc.get("epsilon", 1e-5)),
            max_iters=int(design_doc.get("max_iters", 100)),
            input_free=_mask(input_doc, "watermark.input"),
            output_free=_mask(output_doc, "watermark.output"))
    except ValueError as exc:
        raise ScenarioParseError(f"design: {exc}") from None

    attack = _attack(doc.get("attack"), plant, horizon, base_dir)
    return Scenario(
        plant=plant,
        controller=controller,
        input_pair=input_pair,
        output_pair=output_pair,
        attack=attack,
        horizon=horizon,
        design=design,
        sample_period=sample_period,
        theta_r=theta_r,
        embed_replica=bool(doc.get("embed_replica", True)),
        grid_points=grid_points,
        name=str(doc.get("name", "")),
    )


def load_scenario(path: str) -> Scenario:
    """Read and validate a scenario JSON file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return scenario_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))
