"""Classical model of the oscillator and a bootstrap particle filter.

The classical dynamics are

    dp = (1 + alpha sin 2φ)(-x - gamma x³) dt - damping p dt
         + sqrt(2k) dY + sqrt(2 damping kbt) dU
    dx = p dt,        φ = atan2(p, x)

integrated with a semi-implicit Euler-Maruyama step (momentum first, then
position with the updated momentum). The filter weights each particle by
the Gaussian likelihood of the record increment ``dy`` given its position,
resamples systematically when the effective sample size drops below half
the ensemble, then propagates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core, _fallback
from .errors import DegenerateEnsembleError, RecordMismatchError
from .params import ModelParams
from .quantum import MeasurementRecord, TrajectoryLog

__all__ = [
    "ClassicalState",
    "ParticleEnsemble",
    "FilterLog",
    "sde_step",
    "stationary_variance",
    "pf_init",
    "pf_update",
    "effective_sample_size",
    "systematic_resample",
    "ensemble_moments",
    "run_particle_filter",
]

RESAMPLE_FRACTION = 0.5


@dataclass(frozen=True)
class ClassicalState:
    """Position and momentum; either scalars or equally shaped arrays."""

    x: float | np.ndarray
    p: float | np.ndarray


@dataclass
class ParticleEnsemble:
    """Weighted particles ``(x, p)`` with the generator that drives them."""

    x: np.ndarray
    p: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)
        self.p = np.array(self.p, dtype=float)
        self.weights = np.array(self.weights, dtype=float)
        n = self.x.shape[0]
        if self.x.ndim != 1 or self.p.shape != (n,) or self.weights.shape != (n,):
            raise ValueError("particles and weights must be 1-d arrays of equal length")
        if n < 2:
            raise ValueError(f"an ensemble needs at least 2 particles, got {n}")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and non-negative")

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    def copy(self) -> "ParticleEnsemble":
        ens = ParticleEnsemble.__new__(ParticleEnsemble)
        ens.x, ens.p, ens.weights, ens.rng = self.x.copy(), self.p.copy(), self.weights.copy(), self.rng
        return ens


@dataclass
class FilterLog(TrajectoryLog):
    """Particle-filter trajectory; snapshots hold ``(x, p, weights)`` tuples."""

    ess: np.ndarray | None = None
    resampled: np.ndarray | None = None


def _feedback(x, p, alpha):
    return _fallback.phase_factors(x, p, alpha)


def sde_step(state: ClassicalState, params: ModelParams, noises, dt: float | None = None) -> ClassicalState:
    """Advance the classical SDE by one step.

    ``noises`` is the pair of Wiener increments ``(dY, dU)`` with variance
    ``dt`` each.
    """
    dt = params.dt if dt is None else dt
    d_y, d_u = noises
    x, p = state.x, state.p
    s = _feedback(x, p, params.alpha)
    if np.ndim(s) == 0:
        s = float(s)
    p_new = (
        p
        + (s * (-x - params.gamma * x * x * x) - params.damping * p) * dt
        + math.sqrt(2.0 * params.k) * d_y
        + math.sqrt(2.0 * params.damping * params.kbt) * d_u
    )
    return ClassicalState(x + p_new * dt, p_new)


def stationary_variance(params: ModelParams) -> float:
    """Stationary variance of x and p for the linear trap, ``kbt + k/damping``."""
    return params.kbt + params.k / params.damping


def pf_init(
    n: int,
    params: ModelParams,
    seed: int | np.random.SeedSequence | None = 0,
    prior_mean=(0.0, 0.0),
    prior_cov=None,
) -> ParticleEnsemble:
    """Draw ``n`` equally weighted particles from a Gaussian prior.

    The default covariance is the stationary one of the linear trap.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"particle count must be an integer >= 2, got {n}")
    n = int(n)
    rng = np.random.default_rng(seed)
    if prior_cov is None:
        prior_cov = stationary_variance(params) * np.eye(2)
    draws = rng.multivariate_normal(np.asarray(prior_mean, dtype=float), np.asarray(prior_cov, dtype=float), size=n)
    return ParticleEnsemble(draws[:, 0], draws[:, 1], np.full(n, 1.0 / n), rng)


def effective_sample_size(weights: np.ndarray, tol: float = 1e-9) -> float:
    """``1 / sum(w²)`` for normalised weights."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"weights are not normalised (sum = {total!r})")
    return float(1.0 / np.sum(w * w))


def systematic_resample(ensemble: ParticleEnsemble, rng: np.random.Generator | None = None) -> ParticleEnsemble:
    """Systematic resampling with a single uniform offset; output weights are uniform."""
    rng = ensemble.rng if rng is None else rng
    w = ensemble.weights
    total = w.sum()
    if not total > 0:
        raise DegenerateEnsembleError("cannot resample an ensemble whose weights are all zero")
    n = ensemble.n
    positions = (rng.random() + np.arange(n)) / n
    idx = np.minimum(np.searchsorted(np.cumsum(w / total), positions, side="right"), n - 1)
    return ParticleEnsemble(ensemble.x[idx], ensemble.p[idx], np.full(n, 1.0 / n), ensemble.rng)


def ensemble_moments(ensemble: ParticleEnsemble) -> tuple[float, float]:
    w = ensemble.weights
    return float(np.dot(w, ensemble.x)), float(np.dot(w, ensemble.p))


def _kernel_args(params: ModelParams) -> dict:
    return dict(
        dt=float(params.dt),
        alpha=float(params.alpha),
        gamma=float(params.gamma),
        damping=float(params.damping),
        noise_back=math.sqrt(2.0 * params.k * params.dt),
        noise_th=math.sqrt(2.0 * params.damping * params.kbt * params.dt),
        gain=float(params.record_gain),
    )


def _advance(kernels, ens, xi_back, xi_th, u, dy, kargs, mean_x, mean_p, ess, resampled, offset):
    status, where = kernels.pf_run(
        ens.x, ens.p, ens.weights, xi_back, xi_th, u, dy,
        kargs["dt"], kargs["alpha"], kargs["gamma"], kargs["damping"],
        kargs["noise_back"], kargs["noise_th"], kargs["gain"],
        RESAMPLE_FRACTION * ens.n, mean_x, mean_p, ess, resampled,
    )
    if status != 0:
        raise DegenerateEnsembleError(f"all particle weights vanished at step {offset + where}")


def pf_update(ensemble: ParticleEnsemble, dy: float, params: ModelParams, backend: str | None = None) -> ParticleEnsemble:
    """One filter step: reweight by ``dy``, resample if ESS < N/2, propagate.

    The likelihood uses each particle's position before propagation, the
    same instant at which the record increment was generated.
    """
    if not math.isfinite(dy):
        raise ValueError(f"non-finite measurement increment {dy}")
    ens = ensemble.copy()
    n = ens.n
    xi_back = ens.rng.standard_normal((1, n))
    xi_th = ens.rng.standard_normal((1, n))
    u = ens.rng.random(1)
    out = [np.empty(1) for _ in range(3)]
    resampled = np.empty(1, dtype=np.uint8)
    _advance(_core.get_kernels(backend), ens, xi_back, xi_th, u, np.array([float(dy)]),
             _kernel_args(params), out[0], out[1], out[2], resampled, 0)
    return ens


def run_particle_filter(
    record: MeasurementRecord,
    params: ModelParams,
    n_particles: int = 1000,
    seed: int | np.random.SeedSequence | None = 0,
    snapshot_every: int | None = None,
    ensemble: ParticleEnsemble | None = None,
    backend: str | None = None,
    block: int = 1000,
) -> FilterLog:
    """Run the bootstrap filter along a whole record.

    Entry 0 of the log is the prior; entry ``i + 1`` follows increment ``i``,
    matching the indexing of the quantum trajectory logs. Random numbers are
    drawn in fixed blocks so the result does not depend on the snapshot
    interval.
    """
    if not math.isclose(record.dt, params.dt, rel_tol=1e-12, abs_tol=0.0):
        raise RecordMismatchError(f"record dt {record.dt} differs from model dt {params.dt}")
    ens = pf_init(n_particles, params, seed) if ensemble is None else ensemble.copy()
    kernels = _core.get_kernels(backend)
    kargs = _kernel_args(params)
    steps = record.steps
    mean_x = np.empty(steps + 1)
    mean_p = np.empty(steps + 1)
    ess = np.empty(steps + 1)
    resampled = np.zeros(steps + 1, dtype=np.uint8)
    mean_x[0], mean_p[0] = ensemble_moments(ens)
    ess[0] = effective_sample_size(ens.weights / ens.weights.sum())
    snap_steps, snaps = [], []
    if snapshot_every:
        snap_steps.append(0)
        snaps.append((ens.x.copy(), ens.p.copy(), ens.weights.copy()))

    for b0 in range(0, steps, block):
        b1 = min(steps, b0 + block)
        xi_back = ens.rng.standard_normal((b1 - b0, ens.n))
        xi_th = ens.rng.standard_normal((b1 - b0, ens.n))
        u = ens.rng.random(b1 - b0)
        cuts = [b0, b1]
        if snapshot_every:
            first = (b0 // snapshot_every + 1) * snapshot_every
            cuts += list(range(first, b1, snapshot_every))
        cuts = sorted(set(cuts))
        for s0, s1 in zip(cuts[:-1], cuts[1:]):
            r0, r1 = s0 - b0, s1 - b0
            _advance(
                kernels, ens, xi_back[r0:r1], xi_th[r0:r1], u[r0:r1], record.increments[s0:s1], kargs,
                mean_x[s0 + 1 : s1 + 1], mean_p[s0 + 1 : s1 + 1], ess[s0 + 1 : s1 + 1],
                resampled[s0 + 1 : s1 + 1], s0,
            )
            if snapshot_every and s1 % snapshot_every == 0:
                snap_steps.append(s1)
                snaps.append((ens.x.copy(), ens.p.copy(), ens.weights.copy()))

    return FilterLog(
        times=np.arange(steps + 1) * params.dt,
        mean_x=mean_x,
        mean_p=mean_p,
        snapshot_steps=np.array(snap_steps, dtype=int),
        snapshots=snaps,
        ess=ess,
        resampled=resampled.astype(bool),
    )
