import json
import os
import sys
import warnings

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from wmlab import design, systems

warnings.filterwarnings("ignore", category=UserWarning, module="cvxpy")

SCENARIO_PATH = os.path.join(os.path.dirname(__file__), "..", "scenarios",
                             "siso_benchmark.json")


def benchmark_plant():
    return systems.make_plant(
        [[0.9191, 0.3277], [-0.0768, 0.4269]],
        [[0.0], [1.0]],
        [[1.0, 0.0]],
        [[2.0, 0.0]],
    )


def benchmark_controller():
    return systems.make_controller([[-0.3405, -0.3987]], [[0.5956], [-0.0253]])


def benchmark_pairs():
    return (systems.make_watermark_pair(0.5201, 1.0, 1.0, 1.0),
            systems.make_watermark_pair(0.6714, 1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def bench():
    """The case-study plant, controller and initial watermark pairs."""
    ip, op = benchmark_pairs()
    return {
        "plant": benchmark_plant(),
        "controller": benchmark_controller(),
        "input_pair": ip,
        "output_pair": op,
    }


@pytest.fixture(scope="session")
def bench_design(bench):
    """One full design run on the benchmark, shared across tests."""
    cfg = design.DesignConfig(input_free=("A",), output_free=("A",))
    return design.run_algorithm1(bench["plant"], bench["controller"],
                                 bench["input_pair"], bench["output_pair"], cfg)


@pytest.fixture()
def scenario_doc():
    with open(SCENARIO_PATH, encoding="utf-8") as fh:
        return json.load(fh)
