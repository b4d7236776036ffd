import numpy as np
import pytest

from qtrack import _core

BACKENDS = ["python"] + (["compiled"] if _core.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_density_matrix(dim, rng, rank=None):
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the acceptance summary.

    Call it as ``assert criterion(label, ok, detail)``. A test that errors
    before reporting is listed as FAIL.
    """
    lines = request.config.stash.setdefault(_VERDICTS, [])
    reported = []

    def report(label, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        print(lines[-1])
        reported.append(label)
        return ok

    yield report
    if not reported:
        lines.append(f"FAIL  {request.node.name}: did not complete")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
