"""
Optical field model of the 2D (y = 0) lin-perp-lin lattice plus probe.

Beams in the xz plane (polarized along y) sum to 2 cos(k_x x) e^{i k_z z};
beams in the yz plane (polarized along x) sum to 2 e^{-i k_z z} at y = 0.
The probe runs along +z, polarized along y, with amplitude sqrt(I_P/I_L)
and phase e^{i(k z + delta t)}. For a J = 1/2 -> 3/2 transition the light
shift of |+-> weighs the sigma+- intensity by 1 and the other by 1/3, and
pumping |+-> -> |-+> goes as 2/9 of the opposite intensity.

Positions are arrays of shape (..., 2) holding (x, z).
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from latticemc.geometry import DerivedGeometry, LatticeConfig

PLUS = 1
MINUS = -1

CROSS_WEIGHT = 1.0 / 3.0
PUMP_WEIGHT = 2.0 / 9.0
SCATTER_WEIGHT = 2.0 / 3.0


@dataclass(frozen=True)
class FieldSample:
    a_x: np.ndarray
    a_y: np.ndarray
    iota_plus: np.ndarray
    iota_minus: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    force_plus: np.ndarray
    force_minus: np.ndarray
    pump_plus_to_minus: np.ndarray
    pump_minus_to_plus: np.ndarray
    scatter_plus: np.ndarray
    scatter_minus: np.ndarray

    def potential(self, sublevel: np.ndarray) -> np.ndarray:
        return np.where(sublevel > 0, self.u_plus, self.u_minus)

    def force(self, sublevel: np.ndarray) -> np.ndarray:
        return np.where((np.asarray(sublevel) > 0)[..., None], self.force_plus, self.force_minus)

    def departure_rate(self, sublevel: np.ndarray) -> np.ndarray:
        """Pumping rate out of the given sublevel"""
        return np.where(sublevel > 0, self.pump_plus_to_minus, self.pump_minus_to_plus)

    def scatter_rate(self, sublevel: np.ndarray) -> np.ndarray:
        return np.where(sublevel > 0, self.scatter_plus, self.scatter_minus)


def _split(r) -> Tuple[np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    return r[..., 0], r[..., 1]


def _field_terms(r, t, config: LatticeConfig, geometry: DerivedGeometry):
    x, z = _split(r)
    cos_x = np.cos(geometry.k_x * x)
    sin_x = np.sin(geometry.k_x * x)
    ez = np.exp(1j * geometry.k_z * z)
    probe = config.probe_amplitude * np.exp(1j * (z + config.detuning * np.asarray(t, dtype=float)))

    a_y = 2.0 * cos_x * ez + probe
    a_x = 2.0 * np.conj(ez)

    # Spatial derivatives of the amplitudes
    day_dx = -2.0 * geometry.k_x * sin_x * ez
    day_dz = 2j * geometry.k_z * cos_x * ez + 1j * probe
    dax_dz = -2j * geometry.k_z * np.conj(ez)
    return a_x, a_y, day_dx, day_dz, dax_dz


def amplitudes(r, t, config: LatticeConfig, geometry: DerivedGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Complex amplitudes (a_x, a_y) in single-beam units"""
    a_x, a_y, _, _, _ = _field_terms(r, t, config, geometry)
    return a_x, a_y


def sigma_intensities(a_x, a_y) -> Tuple[np.ndarray, np.ndarray]:
    a_x = np.asarray(a_x)
    a_y = np.asarray(a_y)
    iota_plus = np.abs(a_x + 1j * a_y) ** 2 / 2.0
    iota_minus = np.abs(a_x - 1j * a_y) ** 2 / 2.0
    return iota_plus, iota_minus


def sample_field(r, t, config: LatticeConfig, geometry: DerivedGeometry) -> FieldSample:
    """Potentials, analytic forces and rates at (r, t)"""
    a_x, a_y, day_dx, day_dz, dax_dz = _field_terms(r, t, config, geometry)

    b_plus = a_x + 1j * a_y
    b_minus = a_x - 1j * a_y
    iota_plus = np.abs(b_plus) ** 2 / 2.0
    iota_minus = np.abs(b_minus) ** 2 / 2.0

    # grad |b|^2 / 2 = Re(conj(b) grad b)
    grad_plus = np.stack([
        np.real(np.conj(b_plus) * (1j * day_dx)),
        np.real(np.conj(b_plus) * (dax_dz + 1j * day_dz)),
    ], axis=-1)
    grad_minus = np.stack([
        np.real(np.conj(b_minus) * (-1j * day_dx)),
        np.real(np.conj(b_minus) * (dax_dz - 1j * day_dz)),
    ], axis=-1)

    delta0 = config.delta0
    gamma0 = config.gamma0
    return FieldSample(
        a_x=a_x,
        a_y=a_y,
        iota_plus=iota_plus,
        iota_minus=iota_minus,
        u_plus=delta0 * (iota_plus + CROSS_WEIGHT * iota_minus),
        u_minus=delta0 * (iota_minus + CROSS_WEIGHT * iota_plus),
        force_plus=-delta0 * (grad_plus + CROSS_WEIGHT * grad_minus),
        force_minus=-delta0 * (grad_minus + CROSS_WEIGHT * grad_plus),
        pump_plus_to_minus=PUMP_WEIGHT * gamma0 * iota_minus,
        pump_minus_to_plus=PUMP_WEIGHT * gamma0 * iota_plus,
        scatter_plus=SCATTER_WEIGHT * gamma0 * (iota_plus + CROSS_WEIGHT * iota_minus),
        scatter_minus=SCATTER_WEIGHT * gamma0 * (iota_minus + CROSS_WEIGHT * iota_plus),
    )


def max_pump_rate(config: LatticeConfig) -> float:
    """Upper bound of the pumping rate: |a_x| + |a_y| <= 4 + epsilon"""
    return PUMP_WEIGHT * config.gamma0 * (4.0 + config.probe_amplitude) ** 2 / 2.0
