"""Shared fixtures: a coarse mesh for unit tests and the default-config workspace."""
from __future__ import annotations

import numpy as np
import pytest

from hybrid_pbdw.field_core import HelmholtzConfig, assemble_inner_product, build_mesh
from hybrid_pbdw.harness import ExperimentConfig, Workspace
from hybrid_pbdw.observation import build_sensor_set, random_placement
from hybrid_pbdw.reduced_basis import bind_sensors, generate_snapshots, pod


@pytest.fixture(scope="session")
def mesh17():
    return build_mesh(17, 17)


@pytest.fixture(scope="session")
def h1_17(mesh17):
    return assemble_inner_product(mesh17, "H1")


@pytest.fixture(scope="session")
def l2_17(mesh17):
    return assemble_inner_product(mesh17, "L2")


@pytest.fixture(scope="session")
def snaps17(mesh17):
    """Perfect-model Dirichlet snapshots on a 21-point wavenumber grid."""
    return generate_snapshots(mesh17, np.linspace(2.0, 10.0, 21), HelmholtzConfig(2.0))


@pytest.fixture(scope="session")
def basis17(snaps17, h1_17):
    return pod(snaps17, h1_17, 10)


@pytest.fixture(scope="session")
def sensors17(h1_17):
    """Twenty random sensors with a width the coarse mesh resolves."""
    return build_sensor_set(random_placement(20, seed=3, width=0.08), h1_17)


@pytest.fixture(scope="session")
def bound17(basis17, sensors17):
    return bind_sensors(basis17, sensors17)


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def default_ws(default_cfg):
    return Workspace(default_cfg)


def random_spd(rng, M):
    X = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    return np.real(X @ X.conj().T) / M + 0.1 * np.eye(M)


def random_pbdw_instance(rng, M, N):
    """Real SPD ``A``, full-rank complex ``B`` and complex data ``y``."""
    A = random_spd(rng, M)
    B = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    y = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    return A, B, y


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
