"""
Command-line front end: flat key-value configuration, experiment presets,
sweep orchestration and plot-ready CSV output with provenance.

    latticemc <command> [--config FILE] [--seed N] [--atoms N] [--tmax T]
              [--out DIR] [--threads N] [--log-level L] [--archive]
              [--dry-run] [key=value ...]

Every table starts with a `# manifest_sha256=` line and a header row; a run
that fails part way closes its tables with `# incomplete`.
"""
import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, fields
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from latticemc import __version__
from latticemc.ensemble import EnsembleConfig, EnsembleResult, resolve_threads, run_ensemble, write_archive
from latticemc.errors import ConfigError, LatticeMCError, MissingRequired, TypeMismatch, UnknownKey
from latticemc.field import PLUS
from latticemc.geometry import (
    DerivedGeometry,
    LatticeConfig,
    derive_geometry,
    dynamical_regime,
    oscillation_frequency,
    predict_sr,
    validate,
)
from latticemc.observables import (
    PeakLocation,
    SweepRow,
    bunching_histogram,
    enhancement,
    fit_spectrum,
    kinetic_energy,
    locate_peak,
    msd_diffusion,
    random_walk_diffusion,
    spectrum_point,
)

logger = logging.getLogger(__name__)

COMMANDS = ("geometry", "single", "sweep-gamma", "sweep-delta", "bunching", "spectrum", "sr-scaling")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))
SUMMARY_COLUMNS = ("quantity", "delta0", "probe_ratio", "value", "error", "prediction")
SPECTRUM_COLUMNS = ("gamma0", "delta", "signal", "signal_err")
SCALING_COLUMNS = ("delta0", "sqrt_abs_delta0", "gamma_sr", "gamma_sr_err", "predicted")
GEOMETRY_COLUMNS = ("omega_x", "k_x", "k_z", "lambda_mod", "v_mod", "v_mod_x", "u_plus_x", "u_plus_z",
                    "u_minus_x", "u_minus_z", "brillouin_detuning", "sr_prediction", "period_x", "period_z",
                    "regime")

DEFAULT_SPECTRUM_RATIOS = tuple(round(0.1 * k, 1) for k in range(1, 21))
SWEEP_GRIDS = {
    "sweep-gamma": ("gamma0_grid",),
    "sweep-delta": ("delta_grid", "delta_ratio_grid"),
    "sr-scaling": ("delta0_grid",),
}

PRESETS: Dict[str, Dict[str, str]] = {
    "diffusion-resonance": {
        "command": "sweep-gamma", "delta0": "-200", "theta_deg": "30", "probe_ratio": "0.09",
        "delta_ratio": "1", "gamma0_grid": "6,8,10,12,13.5,15,18,22,30",
    },
    "probe-depth": {
        "command": "sweep-gamma", "delta0": "-50", "theta_deg": "30", "probe_ratio": "0.09",
        "probe_ratio_grid": "0.03,0.06,0.09", "gamma0_grid": "2,3,4,5,6,7,8,10,14,20",
    },
    "bunching": {
        "command": "bunching", "delta0": "-50", "theta_deg": "30", "probe_ratio": "0.09",
        "gamma0_grid": "3,4.5,6,7.5,9,11,14,20",
    },
    "scaling": {
        "command": "sr-scaling", "theta_deg": "30", "probe_ratio": "0.09", "delta0_grid": "-50,-100,-200,-400",
        "gamma0_ratio_grid": "0.4,0.6,0.8,1,1.25,1.6,2.2",
    },
    "spectrum": {
        "command": "spectrum", "delta0": "-50", "theta_deg": "30", "probe_ratio": "0.09", "gamma0": "5.55",
        "gamma0_grid": "2,3.5,5.55,7,9,12",
    },
}


class Settings(BaseModel):
    """Every accepted configuration key with its default"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Optional[str] = None
    preset: Optional[str] = None
    # lattice
    delta0: float = -50.0
    gamma0: float = 7.0
    theta_deg: float = Field(default=30.0, gt=0.0, lt=90.0)
    probe_ratio: float = Field(default=0.09, ge=0.0)
    delta: Optional[float] = None
    delta_ratio: float = 1.0
    # ensemble
    n_atoms: int = Field(default=500, ge=1)
    thermalization_time: Optional[float] = Field(default=None, ge=0.0)
    measurement_time: float = Field(default=2000.0, gt=0.0)
    sampling_interval: float = Field(default=0.5, gt=0.0)
    init_temperature: Optional[float] = Field(default=None, ge=0.0)
    batch_size: int = Field(default=50, ge=1)
    noise_scale: float = Field(default=1.0, ge=0.0)
    jump_recoil: bool = True
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    # sweeps
    gamma0_grid: List[float] = []
    gamma0_ratio_grid: List[float] = []
    delta_grid: List[float] = []
    delta_ratio_grid: List[float] = []
    delta0_grid: List[float] = []
    probe_ratio_grid: List[float] = []
    # measurement
    reference_ratio: float = Field(default=100.0, gt=0.0)
    n_bins: int = Field(default=64, ge=2)
    average_modes: bool = False
    strict_diffusion: bool = True
    archive: bool = False
    out: str = "results"

    @field_validator("gamma0_grid", "gamma0_ratio_grid", "delta_grid", "delta_ratio_grid", "delta0_grid",
                     "probe_ratio_grid", mode="before")
    @classmethod
    def split_grid(cls, value):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("command")
    @classmethod
    def known_command(cls, value):
        if value is not None and value not in COMMANDS:
            raise ValueError(f"command must be one of {', '.join(COMMANDS)}")
        return value


class RunSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    lattice: LatticeConfig
    ensemble: EnsembleConfig
    settings: Settings

    @property
    def out(self) -> str:
        return self.settings.out

    @property
    def master_seed(self) -> int:
        return self.ensemble.master_seed

    def lattice_at(self, **changes) -> LatticeConfig:
        """Lattice config for one sweep point; the probe detuning tracks omega_x unless given absolutely"""
        config = self.lattice.with_updates(**changes)
        if "detuning" not in changes and self.settings.delta is None:
            config = config.with_updates(
                detuning=self.settings.delta_ratio * oscillation_frequency(config.delta0, config.theta))
        return validate(config)

    def manifest(self) -> Dict[str, Any]:
        return {"code_version": __version__, "command": self.command, "settings": self.settings.model_dump()}

    def manifest_hash(self) -> str:
        """Digest of the settings that determine table contents, without out and archive"""
        payload = self.manifest()
        payload["settings"].pop("out")
        payload["settings"].pop("archive")
        return hashlib.sha256(stable_json(payload).encode("utf-8")).hexdigest()


def stable_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _read_pairs(text: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TypeMismatch(f"Line {number}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None) -> RunSpec:
    """Validated RunSpec from `key = value` text; overrides win over the file"""
    values: Dict[str, Any] = _read_pairs(text)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    valid_keys = set(Settings.model_fields)
    for key in values:
        if key not in valid_keys:
            raise UnknownKey(key, valid_keys)

    preset = values.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise TypeMismatch(f"Unknown preset '{preset}'. Valid presets: {', '.join(sorted(PRESETS))}")
        values = {**PRESETS[preset], **values}

    try:
        settings = Settings(**values)
    except ValidationError as e:
        error = e.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        raise TypeMismatch(f"{location}: {error['msg']} (got {error.get('input')!r})") from e

    if settings.command is None:
        raise MissingRequired("No command given; expected one of " + ", ".join(COMMANDS))
    grids = SWEEP_GRIDS.get(settings.command, ())
    if grids and not any(getattr(settings, name) for name in grids):
        raise MissingRequired(f"{settings.command} needs a non-empty {' or '.join(grids)}")

    lattice = validate(LatticeConfig(
        delta0=settings.delta0,
        gamma0=settings.gamma0,
        theta=math.radians(settings.theta_deg),
        probe_ratio=settings.probe_ratio,
        detuning=settings.delta if settings.delta is not None
        else settings.delta_ratio * oscillation_frequency(settings.delta0, math.radians(settings.theta_deg)),
    ))
    try:
        ensemble = EnsembleConfig(
            n_atoms=settings.n_atoms,
            thermalization_time=settings.thermalization_time,
            measurement_time=settings.measurement_time,
            sampling_interval=settings.sampling_interval,
            master_seed=settings.seed,
            init_temperature=settings.init_temperature,
            batch_size=settings.batch_size,
            noise_scale=settings.noise_scale,
            jump_recoil=settings.jump_recoil,
        )
    except ValidationError as e:
        raise TypeMismatch(str(e)) from e
    return RunSpec(command=settings.command, lattice=lattice, ensemble=ensemble, settings=settings)


def _format(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class TableWriter:
    """Single writer for one CSV table, flushed after every row"""

    def __init__(self, path: str, columns: Sequence[str], manifest_hash: str):
        self.path = path
        self.columns = tuple(columns)
        self.rows = 0
        self._handle = open(path, "w", newline="", encoding="utf-8")
        self._handle.write(f"# manifest_sha256={manifest_hash}\n")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._handle.flush()

    def write(self, values: Sequence[Any]) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"{self.path}: expected {len(self.columns)} values, got {len(values)}")
        self._writer.writerow([_format(v) for v in values])
        self._handle.flush()
        self.rows += 1

    def write_row(self, row: SweepRow) -> None:
        record = asdict(row)
        self.write([record[name] for name in self.columns])

    def close(self, complete: bool = True) -> None:
        if self._handle.closed:
            return
        if not complete:
            self._handle.write("# incomplete\n")
        self._handle.close()


class Experiment:
    """Runs one RunSpec; owns the output tables and the per-point manifests"""

    def __init__(self, spec: RunSpec, threads: Optional[int] = None):
        self.spec = spec
        self.settings = spec.settings
        self.threads = resolve_threads(threads)
        self.hash = spec.manifest_hash()
        self.tables: Dict[str, TableWriter] = {}
        self.points: List[Dict[str, Any]] = []
        self.failed_seeds: List[int] = []

    def table(self, name: str, columns: Sequence[str]) -> TableWriter:
        if name not in self.tables:
            self.tables[name] = TableWriter(os.path.join(self.spec.out, f"{name}.csv"), columns, self.hash)
        return self.tables[name]

    def close(self, complete: bool) -> None:
        for writer in self.tables.values():
            writer.close(complete)

    # Measurement helpers

    def ensemble(self, config: LatticeConfig, geometry: DerivedGeometry, label: str) -> EnsembleResult:
        logger.info(f"Point {len(self.points)}: {label}")
        result = run_ensemble(config, geometry, self.spec.ensemble, threads=self.threads)
        manifest = dict(result.manifest, label=label)
        if self.settings.archive:
            path = os.path.join(self.spec.out, f"trajectories_{len(self.points):03d}.csv")
            write_archive(result, path)
            manifest["archive"] = os.path.basename(path)
        self.points.append(manifest)
        self.failed_seeds.extend(result.failed_seeds)
        return result

    def transport(self, config: LatticeConfig, geometry: DerivedGeometry, result: EnsembleResult,
                  with_diffusion: bool = True) -> Dict[str, float]:
        seed = self.spec.master_seed
        e_k, e_k_err = kinetic_energy(result.records, seed=seed)
        values = {"E_K": e_k, "E_K_err": e_k_err, "D_rw": random_walk_diffusion(e_k, config.gamma0)}
        if with_diffusion:
            d_x = msd_diffusion(result.records, "x", seed=seed, strict=self.settings.strict_diffusion)
            d_z = msd_diffusion(result.records, "z", seed=seed, strict=self.settings.strict_diffusion)
            values.update(D_x=d_x.coefficient, D_x_err=d_x.stderr, D_z=d_z.coefficient, D_z_err=d_z.stderr)
        if config.probe_ratio > 0:
            bunching = bunching_histogram(result.records, config, geometry, PLUS, n_bins=self.settings.n_bins,
                                          average_modes=self.settings.average_modes, seed=seed)
            values.update(A=bunching.amplitude, A_err=bunching.amplitude_err,
                          phi=bunching.phase, phi_err=bunching.phase_err)
        return values

    def reference_diffusion(self, config: LatticeConfig) -> Dict[str, float]:
        geometry = derive_geometry(config)
        reference = config.with_updates(detuning=self.settings.reference_ratio * geometry.omega_x)
        result = self.ensemble(reference, derive_geometry(reference),
                               f"reference gamma0={config.gamma0:g} delta={reference.detuning:.4g}")
        d_x = msd_diffusion(result.records, "x", seed=self.spec.master_seed,
                            strict=self.settings.strict_diffusion)
        return {"D_x": d_x.coefficient, "D_x_err": d_x.stderr}

    def enhanced_point(self, config: LatticeConfig, reference: Optional[Dict[str, float]] = None) -> SweepRow:
        geometry = derive_geometry(config)
        result = self.ensemble(config, geometry, f"gamma0={config.gamma0:g} delta={config.detuning:.4g} "
                                                 f"probe_ratio={config.probe_ratio:g}")
        values = self.transport(config, geometry, result)
        if config.probe_ratio > 0:
            reference = reference or self.reference_diffusion(config)
            xi, xi_err = enhancement(values["D_x"], reference["D_x"], values["D_x_err"], reference["D_x_err"])
            values.update(xi=xi, xi_err=xi_err)
        return _row(config, **values)

    def gamma_grid(self, config: LatticeConfig) -> List[float]:
        if self.settings.gamma0_grid:
            return list(self.settings.gamma0_grid)
        if self.settings.gamma0_ratio_grid:
            return [ratio * predict_sr(config) for ratio in self.settings.gamma0_ratio_grid]
        return [config.gamma0]

    def delta_values(self, config: LatticeConfig, ratios: Sequence[float] = ()) -> List[float]:
        if self.settings.delta_grid:
            return list(self.settings.delta_grid)
        omega_x = oscillation_frequency(config.delta0, config.theta)
        return [ratio * omega_x for ratio in (self.settings.delta_ratio_grid or ratios)]

    def peak_row(self, quantity: str, config: LatticeConfig, curve: List[tuple]) -> PeakLocation:
        peak = locate_peak(curve)
        self.table("summary", SUMMARY_COLUMNS).write(
            [quantity, config.delta0, config.probe_ratio, peak.gamma0, peak.stderr, predict_sr(config)])
        logger.info(f"{quantity}: gamma0_SR = {peak.gamma0:.3f} +- {peak.stderr:.3f} "
                    f"(predicted {predict_sr(config):.3f})")
        return peak

    # Commands

    def run_geometry(self) -> None:
        config = self.spec.lattice
        geometry = derive_geometry(config)
        self.table("geometry", GEOMETRY_COLUMNS).write([
            geometry.omega_x, geometry.k_x, geometry.k_z, geometry.lambda_mod, geometry.v_mod,
            geometry.mode_x_velocity(config.detuning), geometry.u_plus[0], geometry.u_plus[1],
            geometry.u_minus[0], geometry.u_minus[1], geometry.brillouin_detuning, geometry.sr_prediction,
            geometry.period_x, geometry.period_z, dynamical_regime(config),
        ])

    def run_single(self) -> None:
        config = self.spec.lattice
        geometry = derive_geometry(config)
        result = self.ensemble(config, geometry, "single")
        self.table("results", SWEEP_COLUMNS).write_row(_row(config, **self.transport(config, geometry, result)))

    def sweep_gamma(self, base: LatticeConfig, scaling: bool = False) -> List[tuple]:
        curves = []
        for probe_ratio in self.settings.probe_ratio_grid or [base.probe_ratio]:
            curve = []
            for gamma0 in self.gamma_grid(self.spec.lattice_at(delta0=base.delta0, probe_ratio=probe_ratio)):
                config = self.spec.lattice_at(delta0=base.delta0, gamma0=gamma0, probe_ratio=probe_ratio)
                row = self.enhanced_point(config)
                self.table("results", SWEEP_COLUMNS).write_row(row)
                curve.append((gamma0, row.xi, row.xi_err))
            if not scaling:
                self.peak_row("gamma_sr_xi", self.spec.lattice_at(delta0=base.delta0, probe_ratio=probe_ratio),
                              curve)
            curves.append(curve)
        return curves

    def sweep_delta(self) -> None:
        base = self.spec.lattice
        reference = self.reference_diffusion(base) if base.probe_ratio > 0 else None
        best = None
        for delta in self.delta_values(base):
            row = self.enhanced_point(self.spec.lattice_at(detuning=delta), reference)
            self.table("results", SWEEP_COLUMNS).write_row(row)
            if best is None or row.xi > best[1]:
                best = (delta, row.xi)
        omega_x = oscillation_frequency(base.delta0, base.theta)
        self.table("summary", SUMMARY_COLUMNS).write(
            ["delta_peak", base.delta0, base.probe_ratio, best[0], math.nan, omega_x])

    def run_bunching(self) -> None:
        curve = []
        for gamma0 in self.gamma_grid(self.spec.lattice):
            config = self.spec.lattice_at(gamma0=gamma0)
            geometry = derive_geometry(config)
            result = self.ensemble(config, geometry, f"bunching gamma0={gamma0:g}")
            values = self.transport(config, geometry, result, with_diffusion=False)
            self.table("results", SWEEP_COLUMNS).write_row(_row(config, **values))
            curve.append((gamma0, values["A"], values["A_err"]))
        if len(curve) >= 5:
            self.peak_row("gamma_sr_bunching", self.spec.lattice, curve)

    def run_spectrum(self) -> None:
        curve = []
        for gamma0 in self.gamma_grid(self.spec.lattice):
            config = self.spec.lattice_at(gamma0=gamma0)
            points = []
            for delta in self.delta_values(config, DEFAULT_SPECTRUM_RATIOS):
                label = f"spectrum gamma0={gamma0:g} delta={delta:.4g}"
                point = spectrum_point(config.with_updates(detuning=delta), self.spec.ensemble,
                                       average_modes=self.settings.average_modes, n_bins=self.settings.n_bins,
                                       runner=lambda c, g, label=label: self.ensemble(c, g, label))
                self.table("spectra", SPECTRUM_COLUMNS).write([gamma0, delta, point.signal, point.error])
                points.append((point.detuning, point.signal, point.error))

            omega_x = oscillation_frequency(config.delta0, config.theta)
            fit = fit_spectrum(points, omega_b_guess=omega_x)
            self.table("results", SWEEP_COLUMNS).write_row(
                _row(config, A_B=fit.A_B, A_B_err=fit.error("A_B")))
            self.table("summary", SUMMARY_COLUMNS).write(
                ["omega_brillouin", config.delta0, config.probe_ratio, fit.Omega_B, fit.error("Omega_B"), omega_x])
            curve.append((gamma0, fit.A_B, fit.error("A_B")))
        if len(curve) >= 5:
            self.peak_row("gamma_sr_brillouin", self.spec.lattice, curve)

    def run_sr_scaling(self) -> None:
        roots, peaks, errors, predictions = [], [], [], []
        for delta0 in self.settings.delta0_grid:
            base = self.spec.lattice_at(delta0=delta0)
            curve = self.sweep_gamma(base, scaling=True)[0]
            peak = locate_peak(curve)
            root = math.sqrt(abs(delta0))
            self.table("scaling", SCALING_COLUMNS).write([delta0, root, peak.gamma0, peak.stderr, predict_sr(base)])
            roots.append(root)
            peaks.append(peak.gamma0)
            errors.append(peak.stderr)
            predictions.append(predict_sr(base) / root)

        x, y = np.array(roots), np.array(peaks)
        sigma = np.array(errors)
        weights = 1.0 / sigma ** 2 if np.all(sigma > 0) else np.ones_like(x)
        slope = float(np.sum(weights * x * y) / np.sum(weights * x ** 2))
        slope_err = float(1.0 / math.sqrt(np.sum(weights * x ** 2)))
        correlation = float(np.corrcoef(x, y)[0, 1]) if len(x) > 1 else math.nan
        summary = self.table("summary", SUMMARY_COLUMNS)
        summary.write(["sr_slope", math.nan, self.spec.lattice.probe_ratio, slope, slope_err,
                       float(np.mean(predictions))])
        summary.write(["sr_correlation", math.nan, self.spec.lattice.probe_ratio, correlation, math.nan, 1.0])
        logger.info(f"SR scaling slope {slope:.3f} +- {slope_err:.3f}, correlation {correlation:.4f}")

    def run(self) -> None:
        handlers = {
            "geometry": self.run_geometry,
            "single": self.run_single,
            "sweep-gamma": lambda: self.sweep_gamma(self.spec.lattice),
            "sweep-delta": self.sweep_delta,
            "bunching": self.run_bunching,
            "spectrum": self.run_spectrum,
            "sr-scaling": self.run_sr_scaling,
        }
        handlers[self.spec.command]()


def _row(config: LatticeConfig, **values) -> SweepRow:
    return SweepRow(gamma0=config.gamma0, delta0=config.delta0, delta=config.detuning,
                    probe_ratio=config.probe_ratio, **values)


def _prepare_output(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ConfigError(f"Output directory {path} is not writable")


def write_manifest(spec: RunSpec, path: str, extra: Dict[str, Any]) -> str:
    manifest = dict(spec.manifest(), manifest_sha256=spec.manifest_hash(), **extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    return path


def execute(spec: RunSpec, threads: Optional[int] = None, dry_run: bool = False) -> int:
    """Run the pipeline for `spec`, write tables and manifest, return the exit status"""
    start_time = time.time()
    metrics: Dict[str, Any] = {"command": spec.command, "status": "started", "points": 0, "failed_trajectories": 0}
    experiment: Optional[Experiment] = None
    exit_code = 0
    try:
        _prepare_output(spec.out)
        if dry_run:
            metrics["status"] = "dry-run"
            return 0
        experiment = Experiment(spec, threads)
        metrics["threads"] = experiment.threads
        experiment.run()
        experiment.close(complete=True)
        metrics["status"] = "success"
    except LatticeMCError as e:
        logger.error(f"{type(e).__name__}: {e}")
        metrics["status"] = "error"
        metrics["error_type"] = type(e).__name__
        exit_code = e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        metrics["status"] = "error"
        metrics["error_type"] = type(e).__name__
        exit_code = 1
    finally:
        if experiment is not None:
            experiment.close(complete=exit_code == 0)
            metrics["points"] = len(experiment.points)
            metrics["failed_trajectories"] = len(experiment.failed_seeds)
        metrics["wall_time_seconds"] = round(time.time() - start_time, 3)
        metrics["peak_memory_mb"] = round(psutil.Process().memory_info().rss / (1024 * 1024), 1)
        if os.path.isdir(spec.out):
            write_manifest(spec, os.path.join(spec.out, "manifest.json"), {
                "status": metrics["status"],
                "wall_time_seconds": metrics["wall_time_seconds"],
                "peak_memory_mb": metrics["peak_memory_mb"],
                "points": experiment.points if experiment is not None else [],
                "failed_seeds": experiment.failed_seeds if experiment is not None else [],
            })
        logger.info(f"Run metrics: {json.dumps(metrics)}")
    return exit_code


def _config_text(path: str) -> str:
    """Configuration text from a key-value file or from a previous run's manifest.json"""
    with open(path, encoding="utf-8") as f:
        content = f.read()
    if not path.endswith(".json"):
        return content
    settings = json.loads(content).get("settings", {})
    lines = []
    for key, value in sorted(settings.items()):
        if value is None or value == []:
            continue
        if isinstance(value, list):
            value = ",".join(_format(float(v)) for v in value)
        lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticemc",
                                     description="Monte-Carlo atoms in a probed lin-perp-lin optical lattice")
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("overrides", nargs="*", metavar="key=value")
    parser.add_argument("--config", help="key-value config file or a manifest.json to replay")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--atoms", type=int)
    parser.add_argument("--tmax", type=float, help="measurement time in 1/omega_r")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="worker count, capped by LATTICEMC_THREADS or the physical core count")
    parser.add_argument("--log-level", default=os.environ.get("LATTICEMC_LOG_LEVEL", "INFO"))
    parser.add_argument("--archive", action="store_true", help="write one trajectory archive per ensemble")
    parser.add_argument("--dry-run", action="store_true", help="validate and write the manifest only")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_intermixed_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), format=LOG_FORMAT)

    overrides: Dict[str, Any] = {}
    for item in args.overrides:
        if "=" not in item:
            parser.error(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    overrides.update({
        "command": args.command,
        "seed": args.seed,
        "n_atoms": args.atoms,
        "measurement_time": args.tmax,
        "out": args.out,
        "archive": "true" if args.archive else None,
    })

    try:
        text = _config_text(args.config) if args.config else ""
        spec = parse_config(text, overrides)
    except OSError as e:
        logger.error(f"Cannot read config: {e}")
        return ConfigError.exit_code
    except LatticeMCError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code

    logger.info(f"Resolved configuration: {stable_json(spec.settings.model_dump())}")
    return execute(spec, threads=args.threads, dry_run=args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
