import numpy as np
import pytest

from wmlab import design, oog, systems
from wmlab.statespace import is_stable

from conftest import benchmark_controller, benchmark_pairs, benchmark_plant


def test_benchmark_design_converges(bench_design):
    rep = bench_design
    assert rep.termination is design.Termination.CONVERGED
    assert rep.iterations <= 100
    assert np.isfinite(rep.gamma)
    assert rep.delay_steps == 2
    assert rep.residual is not None and rep.residual <= 1e-6


def test_benchmark_trace_is_monotone(bench_design):
    trace = bench_design.gamma_trace
    assert len(trace) >= 1 and all(np.isfinite(g) for g in trace)
    for prev, nxt in zip(trace, trace[1:]):
        assert nxt <= prev + 1e-6


def test_design_certificate_holds_on_assembled_loop(bench, bench_design):
    rep = bench_design
    loop = systems.assemble_watermarked(bench["plant"], bench["controller"],
                                        rep.input_pair, rep.output_pair,
                                        covert=True)
    res = oog.verify_dissipativity(loop, rep.gamma, rep.P, rep.delay_steps)
    assert res <= 1e-6
    assert is_stable(rep.input_pair.remover)
    assert is_stable(rep.input_pair.generator)
    assert is_stable(rep.output_pair.remover)
    assert is_stable(rep.output_pair.generator)


def test_storage_step_value_and_delay(bench):
    P, gamma, delay = design.p_step(bench["plant"], bench["controller"],
                                    bench["input_pair"], bench["output_pair"])
    assert delay == 2
    assert gamma == pytest.approx(1629.9492290613205, rel=1e-6)
    assert np.min(np.linalg.eigvalsh(P)) >= -1e-8
    # P must annihilate the attack input column by construction
    loop = systems.assemble_watermarked(bench["plant"], bench["controller"],
                                        bench["input_pair"], bench["output_pair"],
                                        covert=True)
    assert oog.verify_dissipativity(loop, gamma, P, delay) <= 1e-6


def test_loose_tolerance_stops_after_one_iteration(bench):
    cfg = design.DesignConfig(epsilon=1e10, input_free=("A",), output_free=("A",))
    rep = design.run_algorithm1(bench["plant"], bench["controller"],
                                bench["input_pair"], bench["output_pair"], cfg)
    assert rep.termination is design.Termination.CONVERGED
    assert rep.iterations == 1
    assert len(rep.gamma_trace) == 1


def test_empty_masks_leave_filters_untouched(bench):
    cfg = design.DesignConfig(input_free=(), output_free=())
    rep = design.run_algorithm1(bench["plant"], bench["controller"],
                                bench["input_pair"], bench["output_pair"], cfg)
    assert rep.termination is design.Termination.CONVERGED
    np.testing.assert_array_equal(rep.input_pair.remover.A,
                                  bench["input_pair"].remover.A)
    np.testing.assert_array_equal(rep.output_pair.remover.A,
                                  bench["output_pair"].remover.A)
    _, gamma, _ = design.p_step(bench["plant"], bench["controller"],
                                bench["input_pair"], bench["output_pair"])
    assert rep.gamma == pytest.approx(gamma, rel=1e-9)


def test_blind_residual_is_infeasible_at_init(bench):
    plant = bench["plant"]
    rep = design.run_algorithm1(plant, bench["controller"],
                                systems.identity_pair(plant.m),
                                systems.identity_pair(plant.p))
    assert rep.termination is design.Termination.INFEASIBLE_AT_INIT
    assert not np.isfinite(rep.gamma)
    assert rep.P is None and rep.iterations == 0


def test_destabilizing_controller_rejected(bench):
    bad = systems.make_controller([[5.0, 5.0]], [[0.5956], [-0.0253]])
    with pytest.raises(systems.UnstableGain):
        design.run_algorithm1(bench["plant"], bad, bench["input_pair"],
                              bench["output_pair"])


def test_mask_fields_validated():
    with pytest.raises(ValueError):
        design.DesignConfig(input_free=("A", "D"))


def test_report_serialization(bench_design):
    doc = bench_design.to_dict()
    assert doc["termination"] == "Converged"
    assert doc["gamma"] == pytest.approx(bench_design.gamma)
    assert doc["delay_steps"] == 2
    assert isinstance(doc["P"], list)
    for side in ("input_pair", "output_pair"):
        for role in ("remover", "generator"):
            for key in ("A", "B", "C", "D"):
                assert key in doc[side][role]

    csv = bench_design.trace_csv()
    lines = csv.strip().splitlines()
    assert lines[0] == "iter, gamma"
    assert len(lines) == 1 + len(bench_design.gamma_trace)
    assert lines[1].startswith("1, ")


def test_report_hides_infinite_gamma():
    rep = design.DesignReport(
        input_pair=systems.identity_pair(1), output_pair=systems.identity_pair(1),
        gamma=np.inf, gamma_trace=[], P=None, iterations=0,
        termination=design.Termination.INFEASIBLE_AT_INIT)
    assert rep.to_dict()["gamma"] is None
