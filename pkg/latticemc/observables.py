"""
Measurement pipelines over immutable collections of trajectory records.

Uncertainties come from bootstrap resampling over atoms: samples of one atom
are correlated in time, atoms are independent.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares

from latticemc.dynamics import TrajectoryRecord
from latticemc.errors import (
    DiffusiveRegimeNotReached,
    EmptyRecords,
    FitDiverged,
    NoInteriorMaximum,
    ProbeOff,
    TooFewPoints,
    ZeroReference,
)
from latticemc.ensemble import EnsembleConfig, EnsembleResult, run_ensemble
from latticemc.field import PLUS
from latticemc.geometry import MASS, DerivedGeometry, LatticeConfig, derive_geometry

logger = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 200
DEFAULT_BINS = 64
DIFFUSIVE_SLOPE = (0.8, 1.2)
MIN_RECORDS = 10
MIN_SPECTRUM_POINTS = 12
FIT_ITERATIONS = 200
FIT_XTOL = 1e-8
SPECTRUM_PARAMETERS = ("A_e", "B_e", "A_R", "Omega_R", "sigma_R", "A_B", "Omega_B", "sigma_B")


@dataclass(frozen=True)
class DiffusionResult:
    axis: str
    coefficient: float
    stderr: float
    fit_window: Tuple[float, float]
    slope: float
    lags: np.ndarray
    msd: np.ndarray
    msd_err: np.ndarray


@dataclass(frozen=True)
class BunchingResult:
    counts: np.ndarray
    lambda_mod: float
    mean_level: float
    amplitude: float
    phase: float
    amplitude_err: float
    phase_err: float
    quadrature: float
    quadrature_err: float
    residual: float
    mode_sign: int
    n_samples: int

    @property
    def bin_centers(self) -> np.ndarray:
        n_bins = len(self.counts)
        return (np.arange(n_bins) + 0.5) * self.lambda_mod / n_bins


@dataclass(frozen=True)
class SpectrumPoint:
    detuning: float
    signal: float
    error: float
    bunching: Optional[BunchingResult] = None


@dataclass(frozen=True)
class SpectrumFit:
    A_e: float
    B_e: float
    A_R: float
    Omega_R: float
    sigma_R: float
    A_B: float
    Omega_B: float
    sigma_B: float
    residual_norm: float
    initial_residual_norm: float
    covariance_diagonal: np.ndarray
    converged: bool
    degenerate_lines: bool
    evaluations: int

    @property
    def parameters(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in SPECTRUM_PARAMETERS])

    def error(self, name: str) -> float:
        return float(math.sqrt(max(self.covariance_diagonal[SPECTRUM_PARAMETERS.index(name)], 0.0)))


@dataclass(frozen=True)
class PeakLocation:
    gamma0: float
    stderr: float
    window: Tuple[float, float]


@dataclass(frozen=True)
class SweepRow:
    gamma0: float
    delta0: float
    delta: float
    probe_ratio: float
    D_x: float = math.nan
    D_x_err: float = math.nan
    D_z: float = math.nan
    D_z_err: float = math.nan
    xi: float = math.nan
    xi_err: float = math.nan
    A: float = math.nan
    A_err: float = math.nan
    phi: float = math.nan
    phi_err: float = math.nan
    A_B: float = math.nan
    A_B_err: float = math.nan
    E_K: float = math.nan
    E_K_err: float = math.nan
    D_rw: float = math.nan


def _bootstrap(per_atom: np.ndarray, statistic, n_resamples: int, seed: int) -> np.ndarray:
    """Statistic of the column means, recomputed over atom resamples"""
    rng = np.random.default_rng(seed)
    n_atoms = per_atom.shape[0]
    return np.array([
        statistic(per_atom[rng.integers(0, n_atoms, n_atoms)].mean(axis=0))
        for _ in range(n_resamples)
    ])


def _axis_index(axis: Union[str, int]) -> Tuple[int, str]:
    if axis in ("x", 0):
        return 0, "x"
    if axis in ("z", 1):
        return 1, "z"
    raise ValueError(f"axis must be 'x' or 'z', got {axis!r}")


def msd_diffusion(records: Sequence[TrajectoryRecord], axis: Union[str, int], n_lags: int = 16,
                  n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0, strict: bool = True) -> DiffusionResult:
    """Diffusion coefficient from MSD = 2 D tau over the second half of the record"""
    column, name = _axis_index(axis)
    if len(records) < MIN_RECORDS:
        raise EmptyRecords(f"Need at least {MIN_RECORDS} records, got {len(records)}")
    n_samples = min(len(r) for r in records)
    if n_samples < 2:
        raise EmptyRecords("Need at least 2 samples per record")

    sample_dt = float(records[0].times[1] - records[0].times[0])
    last = n_samples - 1
    lag_steps = np.unique(np.round(np.linspace(last / 2.0, last, n_lags)).astype(int))
    lag_steps = lag_steps[lag_steps >= 1]
    lags = lag_steps * sample_dt

    coordinates = np.array([r.positions[:n_samples, column] for r in records])
    per_atom = np.array([
        np.mean((coordinates[:, lag:] - coordinates[:, :-lag]) ** 2, axis=1) for lag in lag_steps
    ]).T

    msd = per_atom.mean(axis=0)
    msd_err = per_atom.std(axis=0, ddof=1) / math.sqrt(per_atom.shape[0])
    window = (float(lags[0]), float(lags[-1]))

    if not np.any(msd > 0):
        return DiffusionResult(name, 0.0, 0.0, window, math.nan, lags, msd, msd_err)

    weights = np.where(msd_err > 0, 1.0 / np.maximum(msd_err, 1e-300) ** 2, 1.0)

    def coefficient(curve: np.ndarray) -> float:
        return float(np.sum(weights * lags * curve) / (2.0 * np.sum(weights * lags ** 2)))

    positive = msd > 0
    if positive.sum() >= 2 and lags[positive][0] != lags[positive][-1]:
        slope = float(np.polyfit(np.log(lags[positive]), np.log(msd[positive]), 1)[0])
    else:
        slope = math.nan

    if strict and not (DIFFUSIVE_SLOPE[0] <= slope <= DIFFUSIVE_SLOPE[1]):
        raise DiffusiveRegimeNotReached(slope)

    replicas = _bootstrap(per_atom, coefficient, n_resamples, seed)
    return DiffusionResult(
        axis=name,
        coefficient=max(coefficient(msd), 0.0),
        stderr=float(np.std(replicas, ddof=1)),
        fit_window=window,
        slope=slope,
        lags=lags,
        msd=msd,
        msd_err=msd_err,
    )


def enhancement(d_x: float, d_x_reference: float, d_x_err: float = 0.0,
                d_x_reference_err: float = 0.0) -> Tuple[float, float]:
    """Fractional increase of D_x over the far-detuned reference, error by quadrature"""
    if d_x_reference <= 0:
        raise ZeroReference(f"Reference diffusion must be positive, got {d_x_reference}")
    xi = (d_x - d_x_reference) / d_x_reference
    error = math.hypot(d_x_err / d_x_reference, d_x * d_x_reference_err / d_x_reference ** 2)
    return xi, error


def moving_frame_coordinate(positions: np.ndarray, times: np.ndarray, geometry: DerivedGeometry,
                            mode_sign: int) -> np.ndarray:
    """u = (r . u_hat - v_mod t) folded into [0, lambda_mod)"""
    direction = geometry.mode_direction(mode_sign)
    u = positions @ direction - geometry.v_mod * times
    return np.mod(u, geometry.lambda_mod)


def _first_harmonic(counts: np.ndarray) -> complex:
    """A e^{i phi} for counts ~ C [1 + A sin(2 pi u / lambda + phi)]"""
    n_bins = counts.shape[-1]
    mean_level = counts.mean(axis=-1)
    phases = np.exp(-2j * np.pi * (np.arange(n_bins) + 0.5) / n_bins)
    coefficient = 2.0 / (n_bins * mean_level) * (counts @ phases)
    return 1j * coefficient


def harmonic_from_counts(counts: np.ndarray) -> Tuple[float, float, float]:
    """(C, A, phi) of a binned moving-frame distribution"""
    counts = np.asarray(counts, dtype=float)
    z = _first_harmonic(counts)
    return float(counts.mean()), float(abs(z)), float(np.angle(z))


def bunching_histogram(records: Sequence[TrajectoryRecord], config: LatticeConfig, geometry: DerivedGeometry,
                       mode_sign: int = PLUS, n_bins: int = DEFAULT_BINS, average_modes: bool = False,
                       n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> BunchingResult:
    """Atomic distribution accumulated over time in the frame of a moving modulation"""
    if config.probe_ratio <= 0:
        raise ProbeOff("Moving-frame bunching needs a probe (probe_ratio > 0)")
    if not records:
        raise EmptyRecords("No trajectory records to accumulate")

    modes = (mode_sign, -mode_sign) if average_modes else (mode_sign,)
    per_atom = np.zeros((len(records), n_bins))
    for k, record in enumerate(records):
        for mode in modes:
            # Mirror symmetry maps the - mode frame onto the + mode frame
            u = moving_frame_coordinate(record.positions, record.times, geometry, mode)
            bins = np.minimum((u / geometry.lambda_mod * n_bins).astype(int), n_bins - 1)
            per_atom[k] += np.bincount(bins, minlength=n_bins)

    counts = per_atom.sum(axis=0)
    mean_level, amplitude, phase = harmonic_from_counts(counts)

    replicas = _bootstrap(per_atom, _first_harmonic, n_resamples, seed)
    z = amplitude * np.exp(1j * phase)
    amplitude_err = float(np.std(np.abs(replicas), ddof=1))
    phase_err = float(np.std(np.angle(replicas / z), ddof=1)) if amplitude > 0 else math.pi
    quadrature_err = float(np.std(np.imag(replicas), ddof=1))

    centers = (np.arange(n_bins) + 0.5) / n_bins
    model = 1.0 + amplitude * np.sin(2.0 * np.pi * centers + phase)
    residual = float(np.sqrt(np.mean((counts / mean_level - model) ** 2)))

    return BunchingResult(
        counts=counts,
        lambda_mod=geometry.lambda_mod,
        mean_level=mean_level,
        amplitude=amplitude,
        phase=phase,
        amplitude_err=amplitude_err,
        phase_err=phase_err,
        quadrature=amplitude * math.sin(phase),
        quadrature_err=quadrature_err,
        residual=residual,
        mode_sign=mode_sign,
        n_samples=int(sum(len(r) for r in records) * len(modes)),
    )


EnsembleRunner = Callable[[LatticeConfig, DerivedGeometry], EnsembleResult]


def spectrum_point(config: LatticeConfig, ensemble_config: EnsembleConfig, geometry: Optional[DerivedGeometry] = None,
                   threads: Optional[int] = None, average_modes: bool = False, n_bins: int = DEFAULT_BINS,
                   runner: Optional[EnsembleRunner] = None) -> SpectrumPoint:
    """Out-of-phase quadrature A sin(phi) of the + mode density grating at detuning delta

    `runner` replaces the plain `run_ensemble` call, e.g. to archive or log each ensemble.
    """
    if config.probe_ratio <= 0:
        raise ProbeOff("Spectrum points need a probe (probe_ratio > 0)")
    if geometry is None or geometry.v_mod != derive_geometry(config).v_mod:
        geometry = derive_geometry(config)
    if runner is None:
        result = run_ensemble(config, geometry, ensemble_config, threads=threads)
    else:
        result = runner(config, geometry)
    bunching = bunching_histogram(result.records, config, geometry, PLUS, n_bins=n_bins,
                                  average_modes=average_modes, seed=ensemble_config.master_seed)
    return SpectrumPoint(config.detuning, bunching.quadrature, bunching.quadrature_err, bunching)


def spectrum_model(delta: np.ndarray, params: Sequence[float]) -> np.ndarray:
    a_e, b_e, a_r, omega_r, sigma_r, a_b, omega_b, sigma_b = params
    return (a_e * delta + b_e
            + a_r * np.exp(-(delta - omega_r) ** 2 / (2.0 * sigma_r ** 2))
            + a_b * np.exp(-(delta - omega_b) ** 2 / (2.0 * sigma_b ** 2)))


def _spectrum_jacobian(delta: np.ndarray, params: Sequence[float]) -> np.ndarray:
    _, _, a_r, omega_r, sigma_r, a_b, omega_b, sigma_b = params
    columns = [delta, np.ones_like(delta)]
    for amplitude, center, width in ((a_r, omega_r, sigma_r), (a_b, omega_b, sigma_b)):
        offset = delta - center
        gauss = np.exp(-offset ** 2 / (2.0 * width ** 2))
        columns += [gauss, amplitude * gauss * offset / width ** 2, amplitude * gauss * offset ** 2 / width ** 3]
    return np.column_stack(columns)


def fit_spectrum(points: Sequence[Tuple[float, float, float]], omega_b_guess: float) -> SpectrumFit:
    """Linear background plus Raman and Brillouin Gaussians, Levenberg-Marquardt"""
    data = np.array(sorted(points), dtype=float)
    if data.shape[0] < MIN_SPECTRUM_POINTS:
        raise TooFewPoints(f"Need at least {MIN_SPECTRUM_POINTS} spectrum points, got {data.shape[0]}")
    delta, signal, error = data[:, 0], data[:, 1], data[:, 2]
    error = np.where(error > 0, error, 1.0)

    spacing = float(np.median(np.diff(delta)))
    width = 3.0 * spacing
    slope, intercept = np.polyfit(delta, signal, 1, w=1.0 / error)
    residual = signal - (slope * delta + intercept)

    # Raman seed: strongest residual away from the Brillouin guess
    far = np.abs(delta - omega_b_guess) > width
    candidates = np.flatnonzero(far) if np.any(far) else np.arange(len(delta))
    raman_index = candidates[np.argmax(np.abs(residual[candidates]))]
    brillouin_index = int(np.argmin(np.abs(delta - omega_b_guess)))

    x0 = np.array([slope, intercept, residual[raman_index], delta[raman_index], width,
                   residual[brillouin_index], omega_b_guess, width])

    def weighted_residual(params):
        return (spectrum_model(delta, params) - signal) / error

    def weighted_jacobian(params):
        return _spectrum_jacobian(delta, params) / error[:, None]

    initial_norm = float(np.linalg.norm(weighted_residual(x0)))
    fit = least_squares(weighted_residual, x0, jac=weighted_jacobian, method="lm",
                        xtol=FIT_XTOL, max_nfev=FIT_ITERATIONS)
    params = fit.x
    final_norm = float(np.linalg.norm(fit.fun))
    if not np.all(np.isfinite(params)) or final_norm > initial_norm:
        raise FitDiverged(f"Spectrum fit diverged (status {fit.status}: {fit.message})")

    # Gaussian widths enter squared; report them positive
    params[4] = abs(params[4])
    params[7] = abs(params[7])

    dof = max(len(delta) - len(params), 1)
    jac = fit.jac
    covariance = np.linalg.pinv(jac.T @ jac) * (final_norm ** 2 / dof)
    degenerate = abs(params[3] - params[6]) < max(params[4], params[7]) / 2.0
    if degenerate:
        logger.warning(f"Raman and Brillouin lines overlap (Omega_R={params[3]:.3f}, Omega_B={params[6]:.3f})")

    return SpectrumFit(
        *[float(p) for p in params],
        residual_norm=final_norm,
        initial_residual_norm=initial_norm,
        covariance_diagonal=np.diag(covariance).copy(),
        converged=bool(fit.status > 0),
        degenerate_lines=bool(degenerate),
        evaluations=int(fit.nfev),
    )


def locate_peak(curve: Sequence[Tuple[float, float, float]]) -> PeakLocation:
    """Vertex of a parabola in log(gamma0) through the five points around the maximum"""
    data = np.array(sorted(curve), dtype=float)
    n = data.shape[0]
    if n < 5:
        raise NoInteriorMaximum(f"Need at least 5 points to locate a peak, got {n}")
    peak = int(np.argmax(data[:, 1]))
    if peak in (0, n - 1):
        raise NoInteriorMaximum(f"Maximum at the grid edge (gamma0={data[peak, 0]:g})")

    lo = min(max(peak - 2, 0), n - 5)
    window = data[lo:lo + 5]
    u = np.log(window[:, 0])
    errors = window[:, 2]
    weights = 1.0 / errors if np.all(errors > 0) else None
    coefficients, covariance = np.polyfit(u, window[:, 1], 2, w=weights, cov=True)
    a, b, _ = coefficients
    if a >= 0:
        raise NoInteriorMaximum("Curve is not concave around its maximum")

    vertex = -b / (2.0 * a)
    gradient = np.array([b / (2.0 * a ** 2), -1.0 / (2.0 * a), 0.0])
    variance = float(gradient @ covariance @ gradient)
    gamma_sr = math.exp(vertex)
    if not (u[0] <= vertex <= u[-1]):
        logger.warning(f"Peak vertex {gamma_sr:.3f} lies outside the fitted window")

    # Shape mismatch: a bell that is not a parabola in log(gamma0) moves the vertex with the window
    near = data[peak - 1:peak + 2]
    a3, b3, _ = np.polyfit(np.log(near[:, 0]), near[:, 1], 2)
    systematic = abs(math.exp(-b3 / (2.0 * a3)) - gamma_sr) if a3 < 0 else 0.0
    statistical = gamma_sr * math.sqrt(max(variance, 0.0))
    return PeakLocation(gamma0=gamma_sr, stderr=math.hypot(statistical, systematic),
                        window=(float(window[0, 0]), float(window[-1, 0])))


def kinetic_energy(records: Sequence[TrajectoryRecord], n_resamples: int = BOOTSTRAP_RESAMPLES,
                   seed: int = 0) -> Tuple[float, float]:
    """Time and ensemble average of p^2 / 2M"""
    if not records:
        raise EmptyRecords("No trajectory records")
    per_atom = np.array([np.mean(np.sum(r.momenta ** 2, axis=1)) / (2.0 * MASS) for r in records])
    if len(per_atom) < 2:
        return float(per_atom.mean()), 0.0
    replicas = _bootstrap(per_atom, float, n_resamples, seed)
    return float(per_atom.mean()), float(np.std(replicas, ddof=1))


def random_walk_diffusion(e_k: float, gamma0: float) -> float:
    """Random-walk scale (2 E_K / M) / gamma0: flight velocity squared times trapping time"""
    if gamma0 <= 0:
        return math.inf
    return (2.0 * e_k / MASS) / gamma0
