import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh16():
    from helmsource.mesh_fem import build_unit_square_mesh
    return build_unit_square_mesh(16)


@pytest.fixture(scope="session")
def mesh32():
    from helmsource.mesh_fem import build_unit_square_mesh
    return build_unit_square_mesh(32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINES:
            terminalreporter.write_line(line)
