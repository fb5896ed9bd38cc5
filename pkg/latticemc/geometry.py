"""
Lattice configuration, validation and closed-form geometry.

All quantities are in recoil units: lengths in 1/k, momenta in hbar*k,
rates and angular frequencies in omega_r, energies in hbar*omega_r and
times in 1/omega_r. With hbar = k = omega_r = 1 the atomic mass is 1/2,
so free flight reads dx/dt = 2 p.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from latticemc.errors import InvalidAngle, NegativeRate, RedDetuningRequired

logger = logging.getLogger(__name__)

HBAR = 1.0
WAVENUMBER = 1.0
RECOIL_FREQUENCY = 1.0
MASS = HBAR * WAVENUMBER ** 2 / (2.0 * RECOIL_FREQUENCY)

# Uniform average of cos^2(k_x x) + cos^2(k_y y) in the y = 0 plane
SPATIAL_AVERAGE_2D = 1.5

REGIME_LOW = 1.0 / 3.0
REGIME_HIGH = 3.0


class LatticeConfig(BaseModel):
    """Physical parameters of the lattice and probe, in recoil units"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    delta0: float                    # light shift per beam, strictly negative
    gamma0: float                    # photon scattering rate per beam
    theta: float = math.pi / 6       # half angle between quasi-copropagating beams
    probe_ratio: float = 0.0         # I_P / I_L
    detuning: float = 0.0            # probe detuning delta

    @property
    def probe_amplitude(self) -> float:
        return math.sqrt(self.probe_ratio)

    def with_updates(self, **changes) -> "LatticeConfig":
        return self.model_copy(update=changes)


@dataclass(frozen=True)
class DerivedGeometry:
    omega_x: float
    k_x: float
    k_z: float
    dk_plus: np.ndarray
    dk_minus: np.ndarray
    lambda_mod: float
    v_mod: float
    u_plus: np.ndarray
    u_minus: np.ndarray
    brillouin_detuning: float
    sr_prediction: float
    period_x: float
    period_z: float

    def mode_direction(self, mode_sign: int) -> np.ndarray:
        return self.u_plus if mode_sign > 0 else self.u_minus

    def mode_x_velocity(self, detuning: float) -> float:
        """Velocity of the moving modulation projected on x"""
        return detuning / abs(self.dk_plus[0])


def validate(config: LatticeConfig) -> LatticeConfig:
    """Check the field invariants and return the config unchanged"""
    if not math.isfinite(config.delta0) or config.delta0 >= 0:
        raise RedDetuningRequired(f"delta0 must be strictly negative, got {config.delta0}")
    if not (0.0 < config.theta < math.pi / 2):
        raise InvalidAngle(f"theta must lie in (0, pi/2), got {config.theta}")
    if not math.isfinite(config.gamma0) or config.gamma0 < 0:
        raise NegativeRate(f"gamma0 must be >= 0, got {config.gamma0}")
    if not math.isfinite(config.probe_ratio) or config.probe_ratio < 0:
        raise NegativeRate(f"probe_ratio must be >= 0, got {config.probe_ratio}")
    if not math.isfinite(config.detuning):
        raise NegativeRate(f"detuning must be finite, got {config.detuning}")
    return config


def oscillation_frequency(delta0: float, theta: float) -> float:
    return 4.0 * math.sin(theta) * math.sqrt(abs(delta0) * RECOIL_FREQUENCY)


def predict_sr(config: LatticeConfig, spatial_average: Optional[float] = None) -> float:
    """Pumping rate at which half an oscillation matches the mean pumping time"""
    average = SPATIAL_AVERAGE_2D if spatial_average is None else spatial_average
    return 9.0 * math.sin(config.theta) * math.sqrt(abs(config.delta0) * RECOIL_FREQUENCY) / (math.pi * average)


def _frozen(vector) -> np.ndarray:
    array = np.array(vector, dtype=float)
    array.setflags(write=False)
    return array


def derive_geometry(config: LatticeConfig) -> DerivedGeometry:
    k_x = WAVENUMBER * math.sin(config.theta)
    k_z = WAVENUMBER * math.cos(config.theta)
    k_probe = np.array([0.0, WAVENUMBER])

    dk_plus = np.array([k_x, k_z]) - k_probe
    dk_minus = np.array([-k_x, k_z]) - k_probe
    dk_norm = float(np.hypot(*dk_plus))

    return DerivedGeometry(
        omega_x=oscillation_frequency(config.delta0, config.theta),
        k_x=k_x,
        k_z=k_z,
        dk_plus=_frozen(dk_plus),
        dk_minus=_frozen(dk_minus),
        lambda_mod=2.0 * math.pi / dk_norm,
        v_mod=config.detuning / dk_norm,
        u_plus=_frozen(dk_plus / dk_norm),
        u_minus=_frozen(dk_minus / float(np.hypot(*dk_minus))),
        brillouin_detuning=oscillation_frequency(config.delta0, config.theta),
        sr_prediction=predict_sr(config),
        period_x=2.0 * math.pi / k_x,
        period_z=math.pi / k_z,
    )


def lattice_periods(geometry: DerivedGeometry) -> tuple:
    return geometry.period_x, geometry.period_z


def dynamical_regime(config: LatticeConfig) -> str:
    """Classify the dynamics by mean pumping rate against the oscillation frequency"""
    omega_x = oscillation_frequency(config.delta0, config.theta)
    mean_rate = (2.0 / 3.0) * config.gamma0
    if omega_x == 0:
        return "jumping"
    ratio = mean_rate / omega_x
    if ratio < REGIME_LOW:
        return "oscillating"
    if ratio > REGIME_HIGH:
        return "jumping"
    return "intermediate"
