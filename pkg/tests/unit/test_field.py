"""
Unit tests for the optical field: intensities, potentials, forces and rates
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticemc.field import MINUS, PLUS, amplitudes, max_pump_rate, sample_field, sigma_intensities
from latticemc.geometry import MASS, LatticeConfig, derive_geometry

THETA = math.pi / 6
CONFIG = LatticeConfig(delta0=-50.0, gamma0=7.0, theta=THETA)
GEOMETRY = derive_geometry(CONFIG)


def _minimum(geometry):
    return np.array([0.0, math.pi / (4.0 * geometry.k_z)])


def _cell_grid(geometry, n=256):
    """Uniform grid over one full period in x and z"""
    xs = (np.arange(n) + 0.5) * 2.0 * math.pi / geometry.k_x / n
    zs = (np.arange(n) + 0.5) * 2.0 * math.pi / geometry.k_z / n
    x, z = np.meshgrid(xs, zs, indexing="ij")
    return np.stack([x.ravel(), z.ravel()], axis=-1)


@pytest.mark.unit
@pytest.mark.physics
def test_sigma_plus_dark_at_minus_minimum():
    """The U- minimum has no sigma+ light, so the minus state is not pumped there"""
    sample = sample_field(_minimum(GEOMETRY), 0.0, CONFIG, GEOMETRY)
    assert sample.iota_plus == pytest.approx(0.0, abs=1e-12)
    assert sample.iota_minus == pytest.approx(8.0)
    assert sample.u_minus == pytest.approx(8.0 * CONFIG.delta0)
    assert sample.u_plus == pytest.approx(8.0 * CONFIG.delta0 / 3.0)
    assert sample.pump_minus_to_plus == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(sample.force(MINUS), 0.0, atol=1e-9)


@pytest.mark.unit
def test_sigma_intensities_match_sample():
    r = np.array([[0.3, 1.1], [2.0, -0.4]])
    a_x, a_y = amplitudes(r, 0.7, CONFIG, GEOMETRY)
    iota_plus, iota_minus = sigma_intensities(a_x, a_y)
    sample = sample_field(r, 0.7, CONFIG, GEOMETRY)
    np.testing.assert_allclose(iota_plus, sample.iota_plus)
    np.testing.assert_allclose(iota_minus, sample.iota_minus)
    # |a_x|^2 + |a_y|^2 is shared between the two circular components
    np.testing.assert_allclose(iota_plus + iota_minus, np.abs(a_x) ** 2 + np.abs(a_y) ** 2)


@pytest.mark.unit
@pytest.mark.physics
def test_forces_match_central_differences(probe_on_config, probe_on_geometry):
    """Analytic -grad U for both sublevels against central differences at 1000 random points"""
    rng = np.random.default_rng(7)
    r = rng.uniform(-20.0, 20.0, size=(1000, 2))
    t = rng.uniform(0.0, 10.0, size=1000)
    h = 1e-5
    sample = sample_field(r, t, probe_on_config, probe_on_geometry)

    for sublevel, analytic in ((PLUS, sample.force_plus), (MINUS, sample.force_minus)):
        numeric = np.empty_like(analytic)
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = h
            forward = sample_field(r + shift, t, probe_on_config, probe_on_geometry).potential(sublevel)
            backward = sample_field(r - shift, t, probe_on_config, probe_on_geometry).potential(sublevel)
            numeric[:, axis] = -(forward - backward) / (2.0 * h)
        scale = np.max(np.abs(analytic))
        assert np.max(np.abs(analytic - numeric)) / scale < 1e-6


@pytest.mark.unit
@pytest.mark.physics
def test_mean_pumping_rate():
    """Spatial average of gamma_+- is (2/3) gamma0 without probe"""
    sample = sample_field(_cell_grid(GEOMETRY), 0.0, CONFIG, GEOMETRY)
    assert np.mean(sample.pump_plus_to_minus) == pytest.approx(2.0 * CONFIG.gamma0 / 3.0, rel=5e-3)
    assert np.mean(sample.pump_minus_to_plus) == pytest.approx(2.0 * CONFIG.gamma0 / 3.0, rel=5e-3)


@pytest.mark.unit
def test_mean_scattering_rate():
    """(2/3) gamma0 (iota_s + iota_-s / 3) averages to (8/3) gamma0"""
    sample = sample_field(_cell_grid(GEOMETRY), 0.0, CONFIG, GEOMETRY)
    assert np.mean(sample.scatter_plus) == pytest.approx(8.0 * CONFIG.gamma0 / 3.0, rel=5e-3)


@pytest.mark.unit
@pytest.mark.physics
@pytest.mark.parametrize("delta0", [-50.0, -200.0])
def test_well_curvature_gives_oscillation_frequency(delta0):
    """sqrt(U''/M) at the U- minimum equals Omega_x"""
    config = LatticeConfig(delta0=delta0, gamma0=0.0, theta=THETA)
    geometry = derive_geometry(config)
    h = 1e-4
    r0 = _minimum(geometry)
    points = np.array([r0 - [h, 0.0], r0, r0 + [h, 0.0]])
    u = sample_field(points, 0.0, config, geometry).u_minus
    curvature = (u[0] - 2.0 * u[1] + u[2]) / h ** 2
    assert math.sqrt(curvature / MASS) == pytest.approx(geometry.omega_x, rel=1e-4)


@pytest.mark.unit
def test_probe_off_field_is_periodic():
    rng = np.random.default_rng(3)
    r = rng.uniform(-10.0, 10.0, size=(200, 2))
    base = sample_field(r, 0.0, CONFIG, GEOMETRY)
    for shift in ([GEOMETRY.period_x, 0.0], [0.0, GEOMETRY.period_z]):
        shifted = sample_field(r + np.array(shift), 0.0, CONFIG, GEOMETRY)
        np.testing.assert_allclose(shifted.u_plus, base.u_plus, atol=1e-9)
        np.testing.assert_allclose(shifted.u_minus, base.u_minus, atol=1e-9)


@pytest.mark.unit
def test_max_pump_rate_bounds_field(probe_on_config, probe_on_geometry):
    rng = np.random.default_rng(11)
    r = rng.uniform(-30.0, 30.0, size=(5000, 2))
    sample = sample_field(r, rng.uniform(0.0, 5.0, size=5000), probe_on_config, probe_on_geometry)
    bound = max_pump_rate(probe_on_config)
    assert np.max(sample.pump_plus_to_minus) <= bound
    assert np.max(sample.pump_minus_to_plus) <= bound


@pytest.mark.unit
@pytest.mark.physics
@settings(max_examples=50, deadline=None)
@given(x=st.floats(min_value=-50.0, max_value=50.0), z=st.floats(min_value=-50.0, max_value=50.0))
def test_sublevels_exchange_under_quarter_shift(x, z):
    """Shifting z by pi / (2 k_z) swaps the roles of U+ and U-"""
    shift = math.pi / (2.0 * GEOMETRY.k_z)
    here = sample_field(np.array([x, z]), 0.0, CONFIG, GEOMETRY)
    there = sample_field(np.array([x, z + shift]), 0.0, CONFIG, GEOMETRY)
    assert float(there.u_plus) == pytest.approx(float(here.u_minus), abs=1e-8)
    assert float(there.u_minus) == pytest.approx(float(here.u_plus), abs=1e-8)


@pytest.mark.unit
@settings(max_examples=50, deadline=None)
@given(x=st.floats(min_value=-50.0, max_value=50.0), z=st.floats(min_value=-50.0, max_value=50.0))
def test_potentials_even_in_x(x, z):
    left = sample_field(np.array([-x, z]), 0.0, CONFIG, GEOMETRY)
    right = sample_field(np.array([x, z]), 0.0, CONFIG, GEOMETRY)
    assert float(left.u_minus) == pytest.approx(float(right.u_minus), abs=1e-8)
    assert float(left.force_minus[0]) == pytest.approx(-float(right.force_minus[0]), abs=1e-7)
