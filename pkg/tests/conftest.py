import numpy as np
import pytest

from hybridpinn import _kernels


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request):
    """Run the test once per kernel implementation."""
    if request.param == "numba" and not _kernels.USE_NUMBA:
        pytest.skip("numba path disabled")
    saved = _kernels.USE_NUMBA
    _kernels.USE_NUMBA = request.param == "numba"
    yield request.param
    _kernels.USE_NUMBA = saved


def rel_close(a, b, rtol, atol=1e-10):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return bool(np.all(np.abs(a - b) <= rtol * np.abs(b) + atol))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
