"""Model parameters for the feedback-cooled nonlinear oscillator.

All quantities are dimensionless: mass, linear trap frequency and the
reduced Planck constant are set to one, and temperature is measured in
units of the oscillator quantum.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

from .errors import InvalidParamsError


# One oscillator cycle is one unit of scaled time, i.e. 1000 steps at the default dt.
CYCLE_TIME = 1.0
TRANSIENT_CYCLES = 20.0


def cycle_steps(dt: float) -> int:
    """Integration steps per oscillator cycle."""
    return int(round(CYCLE_TIME / dt))


def thermal_occupancy(kbt: float, omega: float = 1.0) -> float:
    """Bose-Einstein occupancy 1/(exp(omega/kbt) - 1); zero at kbt == 0."""
    if kbt < 0:
        raise ValueError(f"temperature must be non-negative, got {kbt}")
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if kbt == 0:
        return 0.0
    return 1.0 / math.expm1(omega / kbt)


def auto_dim(kbt: float) -> int:
    """Fock truncation that grows with temperature, between 60 and 120."""
    return int(min(120, max(60, math.ceil(40.0 * (1.0 + kbt)))))


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the measured, feedback-cooled Duffing oscillator.

    Parameters
    ----------
    k : float
        Measurement strength.
    eta : float
        Measurement efficiency in (0, 1].
    gamma : float
        Quartic nonlinearity of the trap.
    damping : float
        Damping rate Gamma = 1/Q.
    kbt : float
        Environment temperature in units of the oscillator quantum.
    alpha : float
        Feedback modulation amplitude.
    omega : float
        Oscillator frequency (1 in the scaled model).
    dt : float
        Integration step; 1000 steps per unit time by default.
    dim : int
        Fock-basis truncation.
    """

    k: float = 0.05
    eta: float = 1.0
    gamma: float = 0.1
    damping: float = 0.125
    kbt: float = 2.0
    alpha: float = 0.05
    omega: float = 1.0
    dt: float = 1e-3
    dim: int = 120

    def __post_init__(self):
        violations = self.violations()
        if violations:
            raise InvalidParamsError(violations)

    def violations(self) -> list[str]:
        out = []
        values = asdict(self)
        for name, value in values.items():
            if not math.isfinite(value):
                out.append(f"{name} must be finite")
        if not 0.0 < self.eta <= 1.0:
            out.append("eta: η ∈ (0,1] violated")
        if self.k < 0:
            out.append("k ≥ 0 violated")
        if self.damping <= 0:
            out.append("damping > 0 violated")
        if self.kbt < 0:
            out.append("kbt ≥ 0 violated")
        if self.dt <= 0:
            out.append("dt > 0 violated")
        if self.omega != 1.0:
            out.append("omega = 1 required (scaled model)")
        if int(self.dim) != self.dim or self.dim < 2:
            out.append("dim ≥ 2 (integer) violated")
        return out

    @property
    def quality_factor(self) -> float:
        return 1.0 / self.damping

    @property
    def n_bar(self) -> float:
        return thermal_occupancy(self.kbt, self.omega)

    @property
    def record_gain(self) -> float:
        """Coefficient of <x> dt in the measurement increment."""
        return math.sqrt(8.0 * self.k * self.eta)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Platform-stable hash of the parameter values."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
