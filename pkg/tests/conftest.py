import functools

import numpy as np
import pytest

from kirchhoff_fem.assembly import assemble
from kirchhoff_fem.mesh import build_uniform_mesh


@functools.lru_cache(maxsize=None)
def uniform_system(level):
    return assemble(build_uniform_mesh(level))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=[0, 1, 2, 3])
def level(request):
    return request.param


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and return the outcome."""

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
