"""
Unit tests for lattice configuration and closed-form geometry
"""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latticemc.errors import ConfigError, InvalidAngle, NegativeRate, RedDetuningRequired
from latticemc.geometry import (
    LatticeConfig,
    derive_geometry,
    dynamical_regime,
    lattice_periods,
    oscillation_frequency,
    predict_sr,
    validate,
)

THETA = math.pi / 6


@pytest.mark.unit
@pytest.mark.physics
@pytest.mark.parametrize("delta0, expected", [(-50.0, 14.142), (-200.0, 28.284), (-400.0, 40.0)])
def test_oscillation_frequency(delta0, expected):
    """Omega_x = 4 sin(theta) sqrt(|delta0|)"""
    geometry = derive_geometry(LatticeConfig(delta0=delta0, gamma0=5.0, theta=THETA))
    assert geometry.omega_x == pytest.approx(expected, rel=1e-4)
    assert geometry.brillouin_detuning == geometry.omega_x


@pytest.mark.unit
@pytest.mark.physics
@pytest.mark.parametrize("delta0, expected", [(-50.0, 6.752), (-200.0, 13.505)])
def test_predict_sr(delta0, expected):
    """Pumping rate at stochastic resonance with the 2D spatial average"""
    config = LatticeConfig(delta0=delta0, gamma0=5.0, theta=THETA)
    assert predict_sr(config) == pytest.approx(expected, rel=1e-3)


@pytest.mark.unit
def test_predict_sr_scales_with_spatial_average():
    config = LatticeConfig(delta0=-50.0, gamma0=5.0, theta=THETA)
    assert predict_sr(config, spatial_average=3.0) == pytest.approx(predict_sr(config) / 2.0)


@pytest.mark.unit
@pytest.mark.physics
def test_moving_modulation(probe_on_config):
    """Wavelength, velocity and unit directions of the probe/lattice modulation"""
    geometry = derive_geometry(probe_on_config)
    dk = math.hypot(0.5, math.cos(THETA) - 1.0)
    assert geometry.lambda_mod == pytest.approx(2.0 * math.pi / dk)
    assert geometry.v_mod == pytest.approx(probe_on_config.detuning / dk)
    assert np.linalg.norm(geometry.u_plus) == pytest.approx(1.0)
    assert np.linalg.norm(geometry.u_minus) == pytest.approx(1.0)
    # Mirror images of each other under x -> -x
    assert geometry.u_minus[0] == pytest.approx(-geometry.u_plus[0])
    assert geometry.u_minus[1] == pytest.approx(geometry.u_plus[1])
    assert geometry.mode_x_velocity(probe_on_config.detuning) == pytest.approx(probe_on_config.detuning / 0.5)


@pytest.mark.unit
def test_derived_vectors_are_read_only(probe_on_config):
    geometry = derive_geometry(probe_on_config)
    with pytest.raises(ValueError):
        geometry.u_plus[0] = 1.0


@pytest.mark.unit
def test_lattice_periods(probe_off_config):
    period_x, period_z = lattice_periods(derive_geometry(probe_off_config))
    assert period_x == pytest.approx(4.0 * math.pi)
    assert period_z == pytest.approx(math.pi / math.cos(THETA))


@pytest.mark.unit
@pytest.mark.parametrize("changes, error", [
    ({"delta0": 0.0}, RedDetuningRequired),
    ({"delta0": 10.0}, RedDetuningRequired),
    ({"theta": 0.0}, InvalidAngle),
    ({"theta": math.pi / 2}, InvalidAngle),
    ({"gamma0": -1.0}, NegativeRate),
    ({"probe_ratio": -0.01}, NegativeRate),
])
def test_validate_rejects(probe_off_config, changes, error):
    """Invalid configs raise the matching config error"""
    with pytest.raises(error) as excinfo:
        validate(probe_off_config.with_updates(**changes))
    assert isinstance(excinfo.value, ConfigError)
    assert excinfo.value.exit_code == 2


@pytest.mark.unit
def test_validate_accepts_zero_rates(probe_off_config):
    config = probe_off_config.with_updates(gamma0=0.0)
    assert validate(config) is config


@pytest.mark.unit
def test_unknown_field_rejected():
    with pytest.raises(ValueError):
        LatticeConfig(delta0=-50.0, gamma0=1.0, wavelength=780.0)


@pytest.mark.unit
@pytest.mark.parametrize("gamma0, regime", [(1.0, "oscillating"), (20.0, "intermediate"), (100.0, "jumping")])
def test_dynamical_regime(probe_off_config, gamma0, regime):
    assert dynamical_regime(probe_off_config.with_updates(gamma0=gamma0)) == regime


@pytest.mark.unit
@pytest.mark.physics
@given(delta0=st.floats(min_value=-1000.0, max_value=-1.0), theta=st.floats(min_value=0.05, max_value=1.5))
def test_sr_prediction_tracks_oscillation_frequency(delta0, theta):
    """predict_sr / Omega_x is the constant 9 / (4 pi * 3/2) for every lattice"""
    config = LatticeConfig(delta0=delta0, gamma0=1.0, theta=theta)
    ratio = predict_sr(config) / oscillation_frequency(delta0, theta)
    assert ratio == pytest.approx(9.0 / (4.0 * math.pi * 1.5), rel=1e-9)
