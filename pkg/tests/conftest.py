import os
import random

import pytest

from maskforest import paillier

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
GLASS_CSV = os.path.join(DATA_DIR, "glass.csv")


@pytest.fixture(scope="session")
def keypair512():
    return paillier.gen(512, random.Random(20240501))


@pytest.fixture(scope="session")
def glass_path():
    return GLASS_CSV


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines.values():
        terminalreporter.write_line(line)
