"""
conftest.py - Shared test fixtures and configurations for pytest
"""
import math
import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

os.environ.setdefault('LATTICEMC_THREADS', '2')

from latticemc.dynamics import TrajectoryRecord  # noqa: E402
from latticemc.geometry import LatticeConfig, derive_geometry, oscillation_frequency  # noqa: E402

THETA = math.pi / 6


def make_records(positions, times, momenta=None):
    """Wrap arrays of shape (n_atoms, n_samples, 2) into trajectory records"""
    positions = np.asarray(positions, dtype=float)
    times = np.asarray(times, dtype=float)
    if momenta is None:
        momenta = np.zeros_like(positions)
    return [
        TrajectoryRecord(
            times=times,
            positions=positions[k],
            momenta=np.asarray(momenta[k], dtype=float),
            sublevels=np.full(len(times), -1, dtype=np.int8),
            origin=positions[k, 0].copy(),
            atom_index=k,
            seed=k,
        )
        for k in range(positions.shape[0])
    ]


@pytest.fixture
def probe_off_config():
    """Lattice at delta0 = -50, theta = 30 degrees, no probe"""
    return LatticeConfig(delta0=-50.0, gamma0=7.0, theta=THETA)


@pytest.fixture
def probe_on_config():
    """Same lattice with a 9% probe tuned to the Brillouin resonance"""
    return LatticeConfig(delta0=-50.0, gamma0=7.0, theta=THETA, probe_ratio=0.09,
                         detuning=oscillation_frequency(-50.0, THETA))


@pytest.fixture
def probe_on_geometry(probe_on_config):
    return derive_geometry(probe_on_config)


@pytest.fixture(scope="session")
def brownian_records():
    """2000 free Brownian walkers with D = 1, 1000 samples each"""
    rng = np.random.default_rng(20240611)
    n_atoms, n_samples, dt = 2000, 1000, 0.5
    steps = rng.normal(0.0, math.sqrt(2.0 * 1.0 * dt), size=(n_atoms, n_samples - 1, 2))
    positions = np.concatenate([np.zeros((n_atoms, 1, 2)), np.cumsum(steps, axis=1)], axis=1)
    return make_records(positions, np.arange(n_samples) * dt)
