import numpy as np
import pytest

from edgeyamabe.flow import ConformalState, FlowParams, FlowSystem, run_flow
from edgeyamabe.geometry import EdgeModel
from edgeyamabe.operators import build_mesh

BENCH_K = 256
BENCH_TAU = 1e-3


def bench_model(m=4, eps=0.1):
    return EdgeModel.rigid(m, "perturbed_sinh", eps=eps, shape="bump")


def model_and_mesh(kind="sinh", m=4, K=BENCH_K, gamma=1.0, eps=0.1, shape="bump", x_max=1.0):
    model = EdgeModel.rigid(m, kind, eps=eps, shape=shape, x_max=x_max)
    return model, build_mesh(K, gamma, x_max, model)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


@pytest.fixture(scope="session")
def bench():
    """PerturbedSinh benchmark (eps=0.1, m=4, K=256, tau=1e-3) run to stop_tol with snapshots."""
    model, mesh = model_and_mesh("perturbed_sinh")
    system = FlowSystem.build(model, mesh)
    params = FlowParams(tau=BENCH_TAU, snapshot_every=10)
    record, final = run_flow(ConformalState.initial(model, mesh, system=system), params, model, mesh, system)
    return model, mesh, system, params, record, final


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def report(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:2d}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
