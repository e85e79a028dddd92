"""Multiplicative watermark design against covert attacks in LTI control loops."""

from wmlab.attacks import (
    AttackScenario,
    SimResult,
    covert_phi_y,
    detect,
    energy,
    simulate,
)
from wmlab.design import DesignConfig, DesignReport, Termination, run_algorithm1
from wmlab.oog import (
    Boundedness,
    OogCertificate,
    OogStatus,
    UndetectabilityVerdict,
    boundedness_check,
    compute_oog,
    undetectability_check,
    verify_dissipativity,
)
from wmlab.scenario import Scenario, ScenarioParseError, load_scenario
from wmlab.statespace import (
    FrequencyGrid,
    StateSpace,
    eval_tf,
    invert,
    is_controllable,
    is_observable,
    is_stable,
    make_statespace,
    poles,
    series,
    sv_sweep,
    zeros,
)
from wmlab.systems import (
    ClosedLoop,
    Controller,
    Plant,
    WatermarkPair,
    assemble_nominal,
    assemble_watermarked,
    identity_pair,
    make_controller,
    make_plant,
    make_watermark_pair,
)

__all__ = [
    "AttackScenario",
    "Boundedness",
    "ClosedLoop",
    "Controller",
    "DesignConfig",
    "DesignReport",
    "FrequencyGrid",
    "OogCertificate",
    "OogStatus",
    "Plant",
    "Scenario",
    "ScenarioParseError",
    "SimResult",
    "StateSpace",
    "Termination",
    "UndetectabilityVerdict",
    "WatermarkPair",
    "assemble_nominal",
    "assemble_watermarked",
    "boundedness_check",
    "compute_oog",
    "covert_phi_y",
    "detect",
    "energy",
    "eval_tf",
    "identity_pair",
    "invert",
    "is_controllable",
    "is_observable",
    "is_stable",
    "load_scenario",
    "make_controller",
    "make_plant",
    "make_statespace",
    "make_watermark_pair",
    "poles",
    "run_algorithm1",
    "series",
    "simulate",
    "sv_sweep",
    "undetectability_check",
    "verify_dissipativity",
    "zeros",
]

__version__ = "0.1.0"
