import os
import sys

import pytest

from decipher import kernels

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
