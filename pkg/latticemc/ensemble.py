"""
Ensemble preparation, thermalization and parallel execution.

Atoms are split into fixed-size batches in index order; each batch is one
joblib task. Every atom's Generator is seeded from (master_seed, atom index),
so the thread count only changes scheduling, never results.
"""
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import psutil
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from latticemc import __version__
from latticemc.dynamics import AtomState, StepControl, TrajectoryRecord, choose_dt, simulate_batch
from latticemc.errors import EnsembleUnhealthy
from latticemc.field import MINUS
from latticemc.geometry import MASS, DerivedGeometry, LatticeConfig, derive_geometry, dynamical_regime, validate

logger = logging.getLogger(__name__)

FAILURE_THRESHOLD = 0.05
SITE_RANGE = 8
ARCHIVE_COLUMNS = ("t", "x", "z", "p_x", "p_z", "s", "atomIndex")


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_atoms: int = Field(default=500, ge=1)
    thermalization_time: Optional[float] = Field(default=None, ge=0)
    measurement_time: float = Field(default=2000.0, gt=0)
    sampling_interval: float = Field(default=0.5, gt=0)
    master_seed: int = Field(default=0, ge=0, lt=2 ** 64)
    init_temperature: Optional[float] = Field(default=None, ge=0)
    batch_size: int = Field(default=50, ge=1)
    noise_scale: float = Field(default=1.0, ge=0)
    jump_recoil: bool = True


@dataclass
class EnsembleResult:
    records: List[TrajectoryRecord]
    manifest: Dict[str, Any]
    failed_seeds: List[int] = field(default_factory=list)


def default_threads() -> int:
    """Concurrency cap from LATTICEMC_THREADS, else the physical core count"""
    value = os.environ.get("LATTICEMC_THREADS")
    if value:
        return max(1, int(value))
    return psutil.cpu_count(logical=False) or 1


def resolve_threads(requested: Optional[int] = None) -> int:
    """Requested worker count, never above the cap from default_threads"""
    cap = default_threads()
    if not requested:
        return cap
    return max(1, min(int(requested), cap))


def trajectory_seed(master_seed: int, atom_index: int) -> int:
    """Split the master seed into an independent 64-bit seed per atom"""
    words = np.random.SeedSequence([master_seed % 2 ** 64, atom_index]).generate_state(2, dtype=np.uint32)
    return (int(words[0]) << 32) | int(words[1])


def trajectory_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def init_temperature(config: LatticeConfig, ensemble_config: EnsembleConfig) -> float:
    if ensemble_config.init_temperature is not None:
        return ensemble_config.init_temperature
    return abs(config.delta0) / 5.0


def thermalization_time(config: LatticeConfig, geometry: DerivedGeometry,
                        ensemble_config: EnsembleConfig) -> float:
    if ensemble_config.thermalization_time is not None:
        return ensemble_config.thermalization_time
    candidates = [20.0 * 2.0 * math.pi / geometry.omega_x]
    mean_rate = (2.0 / 3.0) * config.gamma0
    if mean_rate > 0:
        candidates.append(50.0 / mean_rate)
    return max(candidates)


def _init_atom(geometry: DerivedGeometry, temperature: float, rng: np.random.Generator) -> AtomState:
    # U- minima: cos(k_x x) = +-1 paired with sin(2 k_z z) = +-1
    n = int(rng.integers(-SITE_RANGE, SITE_RANGE + 1))
    m = int(rng.integers(-SITE_RANGE, SITE_RANGE + 1))
    x = n * math.pi / geometry.k_x
    z = ((-1) ** n * math.pi / 4.0 + math.pi * m) / geometry.k_z
    momentum = rng.normal(0.0, math.sqrt(MASS * temperature), size=2) if temperature > 0 else np.zeros(2)
    return AtomState(position=np.array([x, z]), momentum=momentum, sublevel=MINUS, time=0.0)


def init_atoms(config: LatticeConfig, ensemble_config: EnsembleConfig, rng: np.random.Generator,
               geometry: Optional[DerivedGeometry] = None) -> List[AtomState]:
    """Atoms at random U- minima with Gaussian momenta"""
    geometry = geometry or derive_geometry(validate(config))
    temperature = init_temperature(config, ensemble_config)
    return [_init_atom(geometry, temperature, rng) for _ in range(ensemble_config.n_atoms)]


def _run_batch(config: LatticeConfig, geometry: DerivedGeometry, control: StepControl,
               ensemble_config: EnsembleConfig, t_therm: float, indices: Sequence[int],
               seeds: Sequence[int]):
    rngs = [trajectory_rng(seed) for seed in seeds]
    temperature = init_temperature(config, ensemble_config)
    states = [_init_atom(geometry, temperature, rng) for rng in rngs]

    warmup = simulate_batch(states, rngs, t_therm, ensemble_config.sampling_interval, control, config,
                            geometry, seeds=seeds, indices=indices, record=False)
    measured = simulate_batch(warmup.final_states, rngs, ensemble_config.measurement_time,
                              ensemble_config.sampling_interval, control, config, geometry,
                              seeds=seeds, indices=indices, record=True)
    failed = warmup.failed | measured.failed
    records = [None if failed[k] else measured.records[k] for k in range(len(indices))]
    return list(indices), records


def build_manifest(config: LatticeConfig, geometry: DerivedGeometry, ensemble_config: EnsembleConfig,
                   control: StepControl, t_therm: float, seeds: Sequence[int]) -> Dict[str, Any]:
    return {
        "code_version": __version__,
        "lattice": config.model_dump(),
        "ensemble": ensemble_config.model_dump(),
        "dt": control.dt,
        "noise_scale": control.noise_scale,
        "jump_recoil": control.jump_recoil,
        "thermalization_time": t_therm,
        "omega_x": geometry.omega_x,
        "regime": dynamical_regime(config),
        "seeds": list(seeds),
    }


def run_ensemble(config: LatticeConfig, geometry: DerivedGeometry, ensemble_config: EnsembleConfig,
                 threads: Optional[int] = None) -> EnsembleResult:
    validate(config)
    start_time = time.time()
    control = choose_dt(config, geometry, ensemble_config.noise_scale, ensemble_config.jump_recoil)
    t_therm = thermalization_time(config, geometry, ensemble_config)
    n_atoms = ensemble_config.n_atoms
    seeds = [trajectory_seed(ensemble_config.master_seed, i) for i in range(n_atoms)]
    batches = [list(range(s, min(s + ensemble_config.batch_size, n_atoms)))
               for s in range(0, n_atoms, ensemble_config.batch_size)]
    n_jobs = min(resolve_threads(threads), len(batches))

    logger.info(f"Running {n_atoms} atoms in {len(batches)} batches on {n_jobs} workers "
                f"(dt={control.dt:.4g}, thermalization={t_therm:.1f}, regime={dynamical_regime(config)})")

    outputs = Parallel(n_jobs=n_jobs)(
        delayed(_run_batch)(config, geometry, control, ensemble_config, t_therm, batch,
                            [seeds[i] for i in batch])
        for batch in batches
    )

    # Deterministic merge keyed by atom index
    by_index: Dict[int, Optional[TrajectoryRecord]] = {}
    for indices, records in outputs:
        by_index.update(zip(indices, records))
    records = [by_index[i] for i in range(n_atoms) if by_index[i] is not None]
    failed_seeds = [seeds[i] for i in range(n_atoms) if by_index[i] is None]

    manifest = build_manifest(config, geometry, ensemble_config, control, t_therm, seeds)
    manifest["failed_seeds"] = failed_seeds

    if len(failed_seeds) > FAILURE_THRESHOLD * n_atoms:
        raise EnsembleUnhealthy(failed_seeds, n_atoms)
    if failed_seeds:
        logger.warning(f"{len(failed_seeds)} trajectories failed and were excluded")

    logger.info(f"Ensemble completed in {time.time() - start_time:.2f} seconds")
    return EnsembleResult(records=records, manifest=manifest, failed_seeds=failed_seeds)


def write_archive(result: EnsembleResult, path: str) -> str:
    """Columnar trajectory archive with the manifest in the header"""
    rows = [
        np.column_stack([
            record.times,
            record.positions,
            record.momenta,
            record.sublevels.astype(float),
            np.full(len(record), record.atom_index, dtype=float),
        ])
        for record in result.records
    ]
    table = np.vstack(rows) if rows else np.empty((0, len(ARCHIVE_COLUMNS)))
    header = "\n".join([
        "latticemc trajectory archive",
        "manifest: " + json.dumps(result.manifest, sort_keys=True),
        ",".join(ARCHIVE_COLUMNS),
    ])
    np.savetxt(path, table, delimiter=",", fmt="%.10g", header=header, comments="# ")
    logger.info(f"Wrote {table.shape[0]} archive rows to {path}")
    return path
