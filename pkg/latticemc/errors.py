"""
Exception hierarchy for latticemc.

Every error carries the process exit code the CLI returns for it.
"""
from typing import Iterable, Optional


class LatticeMCError(Exception):
    """Base class for all latticemc errors"""
    exit_code = 1


# Configuration errors (exit code 2)

class ConfigError(LatticeMCError, ValueError):
    exit_code = 2


class RedDetuningRequired(ConfigError):
    """The light shift per beam must be strictly negative"""


class InvalidAngle(ConfigError):
    """The half angle must lie strictly between 0 and pi/2"""


class NegativeRate(ConfigError):
    """Pumping rates and probe ratios cannot be negative"""


class UnknownKey(ConfigError):
    def __init__(self, key: str, valid_keys: Iterable[str]):
        self.key = key
        self.valid_keys = sorted(valid_keys)
        super().__init__(f"Unknown configuration key '{key}'. Valid keys: {', '.join(self.valid_keys)}")


class TypeMismatch(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


# Numerical failures (exit code 3)

class NumericalError(LatticeMCError):
    exit_code = 3


class DegenerateDynamics(NumericalError, ValueError):
    """No pumping and no oscillation: nothing sets a time step"""


class NumericalBlowup(NumericalError):
    def __init__(self, seed: Optional[int], message: str = "Trajectory became non-finite"):
        self.seed = seed
        super().__init__(f"{message} (seed={seed})")


class EnsembleUnhealthy(NumericalError):
    def __init__(self, failed_seeds: Iterable[int], n_atoms: int):
        self.failed_seeds = list(failed_seeds)
        self.n_atoms = n_atoms
        super().__init__(
            f"{len(self.failed_seeds)} of {n_atoms} trajectories failed, above the 5% threshold"
        )


class FitDiverged(NumericalError):
    pass


# Acceptance guards (exit code 4)

class AcceptanceGuard(LatticeMCError):
    exit_code = 4


class DiffusiveRegimeNotReached(AcceptanceGuard):
    def __init__(self, slope: float):
        self.slope = slope
        super().__init__(f"Log-log MSD slope {slope:.3f} outside [0.8, 1.2]")


class NoInteriorMaximum(AcceptanceGuard):
    pass


class ProbeOff(AcceptanceGuard, ValueError):
    """Moving-frame observables need a probe beam (epsilon > 0)"""


class EmptyRecords(AcceptanceGuard, ValueError):
    pass


class ZeroReference(AcceptanceGuard, ValueError):
    pass


class TooFewPoints(AcceptanceGuard, ValueError):
    """A fit was handed fewer points than it has to resolve"""
