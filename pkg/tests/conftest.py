import numpy as np
import pytest

import swavelab as sw

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line("  " + line)


@pytest.fixture
def interval_mesh():
    return sw.build_interval_mesh(0.0, 1.0, 33)


@pytest.fixture
def identity_coeffs(interval_mesh):
    field = sw.principal_identity(interval_mesh.nodes)
    return sw.CoefficientSet(principal=field)


def sine_data(mesh, k=1):
    prof = sw.sine_mode_profile([k] * mesh.dim, mesh.lo, mesh.hi)(mesh.nodes)
    prof[mesh.boundary_indices] = 0.0
    return prof


def random_smooth_fields(mesh, samples, seed, max_mode=5):
    rng = np.random.default_rng([seed, 7001])
    out = np.zeros((samples, mesh.num_nodes))
    for k in range(1, max_mode + 1):
        mode = sw.sine_mode_profile([k] * mesh.dim, mesh.lo, mesh.hi)(mesh.nodes)
        out += rng.standard_normal((samples, 1)) / k ** 2 * mode[None, :]
    return out
