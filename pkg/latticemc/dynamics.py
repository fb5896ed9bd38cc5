"""
Stochastic integrator for single atoms on the U+- bipotential.

One step is a velocity-Verlet drift on -grad U_s with the probe phase taken
at the half-step time, then a Bernoulli trial for an optical-pumping jump
(with two recoil kicks when it fires), then a Gaussian momentum increment
whose variance follows the local photon scattering rate.

Many trajectories are advanced in lock-step as one numpy batch. Each
trajectory owns its Generator and draws its variates in fixed blocks, so
its path depends on its own seed and not on the batch it runs in.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from latticemc.errors import DegenerateDynamics, NumericalBlowup
from latticemc.field import FieldSample, MINUS, max_pump_rate, sample_field
from latticemc.geometry import HBAR, MASS, WAVENUMBER, DerivedGeometry, LatticeConfig

logger = logging.getLogger(__name__)

JUMP_PROBABILITY_BOUND = 0.05
STEPS_PER_PERIOD = 200
RANDOM_BLOCK_STEPS = 1024


class StepControl(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float
    noise_scale: float = 1.0
    jump_recoil: bool = True


@dataclass(frozen=True)
class AtomState:
    position: np.ndarray
    momentum: np.ndarray
    sublevel: int = MINUS
    time: float = 0.0

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.momentum))
                    and math.isfinite(self.time))


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled time series of one atom; positions are absolute lattice coordinates"""
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    sublevels: np.ndarray
    origin: np.ndarray
    atom_index: int = 0
    seed: Optional[int] = None

    @property
    def displacements(self) -> np.ndarray:
        return self.positions - self.origin

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class BatchResult:
    records: List[Optional[TrajectoryRecord]]
    final_states: List[AtomState]
    failed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def choose_dt(config: LatticeConfig, geometry: DerivedGeometry,
              noise_scale: float = 1.0, jump_recoil: bool = True) -> StepControl:
    """Largest step that resolves jumps, oscillations and the probe beat"""
    bounds = []
    gamma_max = max_pump_rate(config)
    if gamma_max > 0:
        bounds.append(JUMP_PROBABILITY_BOUND / gamma_max)
    if geometry.omega_x > 0:
        bounds.append(2.0 * math.pi / geometry.omega_x / STEPS_PER_PERIOD)
    if config.probe_ratio > 0 and config.detuning != 0:
        bounds.append(2.0 * math.pi / abs(config.detuning) / STEPS_PER_PERIOD)
    if config.gamma0 == 0 and geometry.omega_x == 0:
        raise DegenerateDynamics("Neither pumping nor oscillation sets a time scale")
    if not bounds:
        raise DegenerateDynamics("No time step bound applies")
    return StepControl(dt=min(bounds), noise_scale=noise_scale, jump_recoil=jump_recoil)


def total_energy(state: AtomState, config: LatticeConfig, geometry: DerivedGeometry) -> float:
    sample = sample_field(state.position, state.time, config, geometry)
    kinetic = float(np.sum(np.asarray(state.momentum) ** 2)) / (2.0 * MASS)
    return kinetic + float(sample.potential(np.asarray(state.sublevel)))


def _draw_block(rng: np.random.Generator, n_steps: int):
    uniforms = rng.random((n_steps, 3))
    normals = rng.standard_normal((n_steps, 2))
    return uniforms, normals


def _advance(positions, momenta, sublevels, time, control: StepControl, config: LatticeConfig,
             geometry: DerivedGeometry, uniforms, normals, start: Optional[FieldSample] = None):
    """One integrator step for arrays of atoms; returns the new state and the end-point field sample"""
    dt = control.dt
    t_mid = time + 0.5 * dt
    if start is None:
        start = sample_field(positions, t_mid, config, geometry)

    p_half = momenta + 0.5 * dt * start.force(sublevels)
    positions = positions + dt * p_half / MASS
    end = sample_field(positions, t_mid, config, geometry)
    momenta = p_half + 0.5 * dt * end.force(sublevels)

    # Optical pumping jump
    flips = uniforms[:, 0] < end.departure_rate(sublevels) * dt
    sublevels = np.where(flips, -sublevels, sublevels)
    if control.jump_recoil:
        angle_a = 2.0 * math.pi * uniforms[:, 1]
        angle_b = 2.0 * math.pi * uniforms[:, 2]
        kicks = HBAR * WAVENUMBER * np.stack(
            [np.cos(angle_a) + np.cos(angle_b), np.sin(angle_a) + np.sin(angle_b)], axis=-1)
        momenta = momenta + flips[:, None] * kicks

    # Continuous recoil noise, D_p = eta (hbar k)^2 R_s / 2
    if control.noise_scale > 0:
        diffusion = control.noise_scale * (HBAR * WAVENUMBER) ** 2 * end.scatter_rate(sublevels) / 2.0
        momenta = momenta + np.sqrt(2.0 * diffusion * dt)[:, None] * normals

    return positions, momenta, sublevels, time + dt, end


def step(state: AtomState, control: StepControl, config: LatticeConfig, geometry: DerivedGeometry,
         rng: np.random.Generator, seed: Optional[int] = None) -> AtomState:
    uniforms, normals = _draw_block(rng, 1)
    positions, momenta, sublevels, time, _ = _advance(
        np.asarray(state.position, dtype=float)[None, :],
        np.asarray(state.momentum, dtype=float)[None, :],
        np.array([state.sublevel]),
        state.time, control, config, geometry, uniforms[0][None, :], normals[0][None, :])
    new_state = AtomState(position=positions[0], momentum=momenta[0], sublevel=int(sublevels[0]), time=time)
    if not new_state.is_finite():
        raise NumericalBlowup(seed)
    return new_state


def simulate_batch(states: Sequence[AtomState], rngs: Sequence[np.random.Generator], horizon: float,
                   sampling_interval: float, control: StepControl, config: LatticeConfig,
                   geometry: DerivedGeometry, seeds: Optional[Sequence[int]] = None,
                   indices: Optional[Sequence[int]] = None, record: bool = True) -> BatchResult:
    """Advance independent trajectories together for `horizon`, sampling every `sampling_interval`"""
    n_atoms = len(states)
    if len(rngs) != n_atoms:
        raise ValueError("One generator per trajectory is required")
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if record and sampling_interval < control.dt * (1 - 1e-9):
        raise ValueError(f"sampling interval {sampling_interval} is shorter than dt={control.dt}")
    seeds = list(seeds) if seeds is not None else [None] * n_atoms
    indices = list(indices) if indices is not None else list(range(n_atoms))

    times0 = {float(s.time) for s in states}
    if len(times0) != 1:
        raise ValueError("All trajectories in a batch must start at the same time")
    time = times0.pop()

    positions = np.array([s.position for s in states], dtype=float).reshape(n_atoms, 2)
    momenta = np.array([s.momentum for s in states], dtype=float).reshape(n_atoms, 2)
    sublevels = np.array([s.sublevel for s in states], dtype=np.int64)
    origin = positions.copy()
    failed = np.zeros(n_atoms, dtype=bool)

    n_steps = int(round(horizon / control.dt))
    stride = max(1, int(round(sampling_interval / control.dt))) if record else n_steps + 1
    n_samples = n_steps // stride + 1 if record else 0

    sample_times = np.empty(n_samples)
    sample_positions = np.empty((n_samples, n_atoms, 2))
    sample_momenta = np.empty((n_samples, n_atoms, 2))
    sample_sublevels = np.empty((n_samples, n_atoms), dtype=np.int8)

    def store(slot: int) -> None:
        sample_times[slot] = time
        sample_positions[slot] = positions
        sample_momenta[slot] = momenta
        sample_sublevels[slot] = sublevels

    if record:
        store(0)

    # Without a probe the field is static and the end-point sample can seed the next step
    static_field = config.probe_ratio == 0
    cached: Optional[FieldSample] = None
    done = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while done < n_steps:
            block = min(RANDOM_BLOCK_STEPS, n_steps - done)
            draws = [_draw_block(rng, block) for rng in rngs]
            uniforms = np.stack([d[0] for d in draws], axis=1)
            normals = np.stack([d[1] for d in draws], axis=1)
            for i in range(block):
                positions, momenta, sublevels, time, end = _advance(
                    positions, momenta, sublevels, time, control, config, geometry,
                    uniforms[i], normals[i], start=cached)
                cached = end if static_field else None
                done += 1
                if record and done % stride == 0:
                    store(done // stride)

            bad = ~(np.isfinite(positions).all(axis=1) & np.isfinite(momenta).all(axis=1))
            if np.any(bad & ~failed):
                for k in np.flatnonzero(bad & ~failed):
                    logger.warning(f"Trajectory {indices[k]} (seed={seeds[k]}) became non-finite at t={time:.3f}")
                failed |= bad
                positions[bad] = 0.0
                momenta[bad] = 0.0
                cached = None

    final_states = [
        AtomState(position=positions[k].copy(), momentum=momenta[k].copy(), sublevel=int(sublevels[k]), time=time)
        for k in range(n_atoms)
    ]
    records: List[Optional[TrajectoryRecord]] = [None] * n_atoms
    if record:
        for k in range(n_atoms):
            if failed[k]:
                continue
            records[k] = TrajectoryRecord(
                times=sample_times.copy(),
                positions=sample_positions[:, k, :].copy(),
                momenta=sample_momenta[:, k, :].copy(),
                sublevels=sample_sublevels[:, k].copy(),
                origin=origin[k].copy(),
                atom_index=indices[k],
                seed=seeds[k],
            )
    return BatchResult(records=records, final_states=final_states, failed=failed)


def simulate_trajectory(init: AtomState, horizon: float, sampling_interval: float, control: StepControl,
                        config: LatticeConfig, geometry: DerivedGeometry, rng: np.random.Generator,
                        seed: Optional[int] = None) -> TrajectoryRecord:
    result = simulate_batch([init], [rng], horizon, sampling_interval, control, config, geometry,
                            seeds=[seed])
    if result.failed[0]:
        raise NumericalBlowup(seed)
    return result.records[0]
