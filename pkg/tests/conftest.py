import os
import subprocess
import sys
from pathlib import Path

import pytest

from curbsense import roadsim

MASTER_SEED = 1234


@pytest.fixture(scope="session")
def route():
    return roadsim.load_route()


@pytest.fixture(scope="session")
def geometry(route):
    return roadsim.build_route_geometry(route)


@pytest.fixture(scope="session")
def profiles():
    return roadsim.load_profiles()


@pytest.fixture(scope="session")
def experiment():
    return roadsim.default_experiment(MASTER_SEED)


REPO = Path(__file__).resolve().parents[1]
SMOKE_CONFIG = REPO / "configs" / "smoke.json"
SMOKE_SEED = 7


def run_cli(*args, timeout=1800):
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    return subprocess.run([sys.executable, "-m", "curbsense.cli", *map(str, args)], capture_output=True, text=True,
                          env=env, timeout=timeout)


@pytest.fixture(scope="session")
def smoke_runs(tmp_path_factory):
    """Two single-threaded `all` runs of the smoke config into separate directories."""
    base = tmp_path_factory.mktemp("smoke")
    outs = []
    for name in ("a", "b"):
        out = base / name
        proc = run_cli("all", "--config", SMOKE_CONFIG, "--seed", SMOKE_SEED, "--out", out, "--jobs", 1)
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    return outs


# one line per acceptance criterion, repeated in the terminal summary so it survives output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
