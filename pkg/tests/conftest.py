import numpy as np
import pytest

from unfold.forward_model import GaussianKernel, build_response_matrix
from unfold.simulate import GaussianMixtureIntensity, bin_points, sample_true_points, thin_and_smear
from unfold.splines import aristotelian_matrix, build_basis, curvature_matrix


@pytest.fixture(scope="session")
def gmm_basis():
    return build_basis((-7.0, 7.0), 26, 4)


@pytest.fixture(scope="session")
def gmm_edges():
    return np.linspace(-7.0, 7.0, 41)


@pytest.fixture(scope="session")
def gmm_response(gmm_basis, gmm_edges):
    return build_response_matrix(GaussianKernel(1.0), gmm_basis, gmm_edges)


@pytest.fixture(scope="session")
def gmm_omega_a(gmm_basis):
    return aristotelian_matrix(curvature_matrix(gmm_basis), 5.0, 5.0)


@pytest.fixture(scope="session")
def gmm_medium_data(gmm_edges):
    truth = GaussianMixtureIntensity(10000.0)
    pts = sample_true_points(truth, 101)
    return bin_points(thin_and_smear(pts, GaussianKernel(1.0), (-7.0, 7.0), 102), gmm_edges)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion, echoed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
