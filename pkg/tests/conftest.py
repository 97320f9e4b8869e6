import os

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def doubling_tower():
    """Doubling map over Delta_0 = [1/4, 9/32]: 1024 cells, sigma = 0.6, R0 = 0."""
    from nuelab.constants import derive_eps_collar
    from nuelab.maps import doubling
    from nuelab.tower import BaseDisk, build_partition

    disk = BaseDisk((17 / 64,), 1 / 64, 4, 16.0, 0.0)
    eps = derive_eps_collar(16.0, 0.6, 4, 1 / 64)
    return build_partition(doubling(), None, disk, (1 / 32) / 1024, 300, R0=0, sigma=0.6, eps=eps, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(k: int, passed: bool, seconds: float, budget: float, detail: str):
        ok = bool(passed) and seconds < budget
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s of {budget:.0f} s) {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
