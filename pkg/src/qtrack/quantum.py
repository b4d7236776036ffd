"""Stochastic master equation for the measured, feedback-cooled oscillator.

The same integrator serves two roles. In *truth* mode it draws Wiener
increments, emits the measurement record ``dy = sqrt(8 k eta) <x> dt + dW``
and advances its own state. In *estimation* mode it consumes a recorded
``dy`` and advances a conditional state from an uninformative prior.

Each step first rotates the state with the Cayley propagator

    U = (I + iH dt/2)^-1 (I - iH dt/2)

which is exactly unitary, and then applies the positivity-preserving
Kraus map of measurement and thermal contact

    M = I - 1/2 (sum V†V + L†L) dt + sqrt(eta) L dy + (eta/2) L² (dy² - dt)
    rho' ∝ M rho M† + (1 - eta) L rho L† dt + sum V rho V† dt

with ``L = sqrt(2k) x``. Averaged over the reference Gaussian ``dy``, these
operators sum to ``S = I + dt² (A² + (eta²/2) L⁴)`` with
``A = -1/2 (sum V†V + L†L)`` rather than to ``I``. The step therefore
conjugates the state with ``C = I - (dt²/2)(A² + (eta²/2) L⁴)``, which
equals ``S^-1/2`` up to ``O(dt⁴)``. Without it the leftover ``O(dt²)``
term biases stationary occupations by an amount proportional to ``dt``.
Folding ``-iH dt`` into ``M`` instead would be
unstable: the truncated quartic trap puts eigenvalues of order 10² to 10³
at the top of the ladder, and ``|1 - iE dt|² > 1`` pumps population there.
All operators are banded in the Fock basis, which the compiled kernel
exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core, _fallback
from .errors import NonFiniteIncrementError, NumericalInvariantError, RecordMismatchError
from .fock import (
    build_ladder_ops,
    build_quadratures,
    check_truncation,
    density_matrix_violations,
    maximally_mixed,
    thermal_state,
)
from .params import ModelParams

__all__ = [
    "MeasurementRecord",
    "TrajectoryLog",
    "SMEOperators",
    "KrausIntegrator",
    "hamiltonian_terms",
    "build_hamiltonian",
    "build_thermal_ops",
    "measurement_operator",
    "feedback_phase",
    "feedback_factor",
    "rouchon_step",
    "rouchon_step_dense",
    "normalizing_congruence",
    "cayley_unitary",
    "simulate_truth",
    "estimate_conditional",
]


@dataclass
class MeasurementRecord:
    """Weak-measurement increments ``dy`` sampled every ``dt``."""

    dt: float
    increments: np.ndarray
    seed: int | None = None
    params_hash: str = ""

    def __post_init__(self):
        self.increments = np.ascontiguousarray(self.increments, dtype=float)
        if self.increments.ndim != 1:
            raise ValueError("increments must be one-dimensional")
        if not np.all(np.isfinite(self.increments)):
            raise NonFiniteIncrementError("measurement record contains non-finite increments")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def steps(self) -> int:
        return int(self.increments.shape[0])


@dataclass
class TrajectoryLog:
    """Per-step moments of a trajectory plus optional state snapshots.

    ``snapshots[i]`` is the state after ``snapshot_steps[i]`` steps; for the
    particle filter the snapshot entries are ``(x, p, w)`` arrays instead.
    """

    times: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    purity: np.ndarray | None = None
    snapshot_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    snapshots: list = field(default_factory=list)
    innovations: np.ndarray | None = None

    def __len__(self):
        return int(self.times.shape[0])


def hamiltonian_terms(dim: int, gamma: float, damping: float) -> tuple[np.ndarray, np.ndarray]:
    """Split H into the part untouched by feedback and the modulated trap.

    Returns ``(h_static, h_trap)`` with ``h_static = p²/2 + damping/4 (xp + px)``
    and ``h_trap = x²/2 + gamma/4 x⁴``.
    """
    x, p = build_quadratures(dim)
    x2 = x @ x
    h_static = 0.5 * (p @ p) + 0.25 * damping * (x @ p + p @ x)
    h_trap = 0.5 * x2 + 0.25 * gamma * (x2 @ x2)
    return h_static, h_trap


def feedback_factor(mean_x: float, mean_p: float, alpha: float) -> float:
    """Trap prefactor ``1 + alpha sin 2φ`` with ``φ = atan2(p, x)``.

    ``sin 2φ = 2xp / (x² + p²)``; the origin maps to φ = 0.
    """
    return _fallback.phase_factor(float(mean_x), float(mean_p), float(alpha))


def build_hamiltonian(params: ModelParams, phi: float) -> np.ndarray:
    h_static, h_trap = hamiltonian_terms(params.dim, params.gamma, params.damping)
    return h_static + (1.0 + params.alpha * math.sin(2.0 * phi)) * h_trap


def build_thermal_ops(n_bar: float, omega: float, q: float, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Thermal decay and excitation operators ``sqrt((n+1)ω/Q) a`` and ``sqrt(nω/Q) a†``."""
    if q <= 0:
        raise ValueError(f"quality factor must be positive, got {q}")
    if n_bar < 0:
        raise ValueError(f"mean occupancy must be non-negative, got {n_bar}")
    a, ad = build_ladder_ops(dim)
    return math.sqrt((n_bar + 1.0) * omega / q) * a, math.sqrt(n_bar * omega / q) * ad


def measurement_operator(params: ModelParams) -> np.ndarray:
    x, _ = build_quadratures(params.dim)
    return math.sqrt(2.0 * params.k) * x


def feedback_phase(rho: np.ndarray) -> float:
    """Oscillation phase ``atan2(<p>, <x>)`` of a state, in (-π, π]."""
    x, p = build_quadratures(rho.shape[0])
    mx = float(np.einsum("ij,ji->", x, rho).real)
    mp = float(np.einsum("ij,ji->", p, rho).real)
    return math.atan2(mp, mx)


@dataclass(frozen=True, eq=False)
class SMEOperators:
    """Dense operators defining one SME; build with :meth:`from_params`."""

    h_static: np.ndarray
    h_trap: np.ndarray
    measurement: np.ndarray
    dissipators: tuple
    eta: float
    dt: float
    alpha: float
    gain: float

    @classmethod
    def from_params(cls, params: ModelParams) -> "SMEOperators":
        h_static, h_trap = hamiltonian_terms(params.dim, params.gamma, params.damping)
        v1, v2 = build_thermal_ops(params.n_bar, params.omega, params.quality_factor, params.dim)
        return cls(
            h_static=h_static,
            h_trap=h_trap,
            measurement=measurement_operator(params),
            dissipators=(v1, v2),
            eta=params.eta,
            dt=params.dt,
            alpha=params.alpha,
            gain=params.record_gain,
        )

    @property
    def dim(self) -> int:
        return self.h_static.shape[0]


def cayley_unitary(h: np.ndarray, dt: float) -> np.ndarray:
    """Dense ``(I + iH dt/2)^-1 (I - iH dt/2)``, a unitary approximation of ``exp(-iH dt)``."""
    eye = np.eye(h.shape[0])
    return np.linalg.solve(eye + 0.5j * dt * h, eye - 0.5j * dt * h)


def normalizing_congruence(ops: SMEOperators) -> np.ndarray:
    """Dense ``C = I - (dt²/2)(A² + (eta²/2) L⁴)`` for the operators ``ops``."""
    big_l = ops.measurement
    drift = -0.5 * big_l.conj().T @ big_l
    for v in ops.dissipators:
        drift = drift - 0.5 * v.conj().T @ v
    l2 = big_l @ big_l
    excess = drift @ drift + 0.5 * ops.eta**2 * (l2.conj().T @ l2)
    return np.eye(ops.dim) - 0.5 * ops.dt**2 * excess


def rouchon_step_dense(rho: np.ndarray, dy: float, ops: SMEOperators) -> np.ndarray:
    """One step with dense matrices; the reference for the banded kernels."""
    if not math.isfinite(dy):
        raise NonFiniteIncrementError(f"non-finite increment {dy}")
    if rho.shape != ops.h_static.shape:
        raise ValueError(f"state shape {rho.shape} does not match operators {ops.h_static.shape}")
    dim = rho.shape[0]
    x, p = build_quadratures(dim)
    mx = float(np.einsum("ij,ji->", x, rho).real)
    mp = float(np.einsum("ij,ji->", p, rho).real)
    h = ops.h_static + feedback_factor(mx, mp, ops.alpha) * ops.h_trap
    u = cayley_unitary(h, ops.dt)
    rho = u @ rho @ u.conj().T
    c = normalizing_congruence(ops)
    rho = c @ rho @ c.conj().T
    big_l = ops.measurement
    dt = ops.dt
    drift = -0.5 * big_l.conj().T @ big_l
    for v in ops.dissipators:
        drift = drift - 0.5 * v.conj().T @ v
    m = (
        np.eye(dim)
        + drift * dt
        + math.sqrt(ops.eta) * big_l * dy
        + 0.5 * ops.eta * (big_l @ big_l) * (dy * dy - dt)
    )
    out = m @ rho @ m.conj().T
    out += (1.0 - ops.eta) * dt * big_l @ rho @ big_l.conj().T
    for v in ops.dissipators:
        out += dt * v @ rho @ v.conj().T
    out /= np.trace(out).real
    return 0.5 * (out + out.conj().T)


TRACE_TOL = 1e-10
PSD_TOL = 1e-8


@dataclass
class KrausRun:
    rho: np.ndarray
    dy: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    purity: np.ndarray
    snapshot_steps: np.ndarray
    snapshots: list
    violations: list
    step_checks: int = 0
    step_violations: int = 0
    first_bad_step: int = -1


class KrausIntegrator:
    """Banded Kraus-map integrator bound to one set of operators.

    Parameters
    ----------
    ops : SMEOperators
        Operators of the SME; all are converted to band storage once.
    backend : {'compiled', 'python'}, optional
        Kernel implementation; defaults to the compiled one when built.
    """

    def __init__(self, ops: SMEOperators, backend: str | None = None):
        self.ops = ops
        self.kernels = _core.get_kernels(backend)
        dim = ops.dim
        dt = ops.dt
        big_l = ops.measurement
        self.hbw = max(_core.bandwidth(ops.h_static), _core.bandwidth(ops.h_trap))
        self.hterms = np.ascontiguousarray(
            np.stack([_core.to_band(0.5 * dt * h, self.hbw) for h in (ops.h_static, ops.h_trap)])
        )
        drift = -0.5 * big_l.conj().T @ big_l
        for v in ops.dissipators:
            drift = drift - 0.5 * v.conj().T @ v
        m0 = np.eye(dim) + drift * dt
        cmat = normalizing_congruence(ops)
        self.cbw = _core.bandwidth(cmat)
        self.cterm = np.ascontiguousarray(_core.to_band(cmat, self.cbw))
        m_l = math.sqrt(ops.eta) * big_l
        m_l2 = 0.5 * ops.eta * (big_l @ big_l)
        terms = (m0, m_l, m_l2)
        self.bw = max(_core.bandwidth(t) for t in terms)
        self.mterms = np.ascontiguousarray(np.stack([_core.to_band(t, self.bw) for t in terms]))

        jumps = [math.sqrt(dt) * v for v in ops.dissipators]
        if ops.eta < 1.0:
            jumps.append(math.sqrt((1.0 - ops.eta) * dt) * big_l)
        jumps = [j for j in jumps if np.any(j != 0)]
        self.jbw = max([_core.bandwidth(j) for j in jumps], default=1)
        self.jumps = np.ascontiguousarray(
            np.stack([_core.to_band(j, self.jbw) for j in jumps])
            if jumps
            else np.zeros((0, 2 * self.jbw + 1, dim), dtype=complex)
        )
        x, p = build_quadratures(dim)
        self.xband = _core.to_band(x, 1)
        self.pband = _core.to_band(p, 1)

    @property
    def dim(self) -> int:
        return self.ops.dim

    def run(
        self,
        rho0: np.ndarray,
        increments: np.ndarray,
        given_dy: bool,
        snapshot_every: int | None = None,
        check_every: int | None = None,
        check_each_step: bool = False,
    ) -> KrausRun:
        """Integrate over all ``increments``.

        With ``given_dy`` the increments are measurement increments;
        otherwise they are Wiener increments and ``dy`` is generated from the
        evolving state. The full set of density-matrix invariants is checked
        every ``check_every`` steps (and at the end). In truth mode a
        :class:`~qtrack.fock.TruncationWarning` also flags population
        creeping into the top of the basis; the conditional state is
        exempt because its uninformative prior fills the basis on purpose.
        ``check_each_step``
        additionally verifies trace and positivity inside the kernel after
        every step. Failures are collected, not raised.
        """
        rho0 = np.asarray(rho0)
        if rho0.shape != (self.dim, self.dim):
            raise ValueError(f"state shape {rho0.shape} does not match basis size {self.dim}")
        inc = np.ascontiguousarray(increments, dtype=float)
        n = inc.shape[0]
        rho = np.array(rho0, dtype=complex, order="C", copy=True)
        dy = np.empty(n)
        mean_x = np.empty(n + 1)
        mean_p = np.empty(n + 1)
        pur = np.empty(n + 1)

        stops = {n}
        if snapshot_every:
            stops.update(range(snapshot_every, n, snapshot_every))
        if check_every:
            stops.update(range(check_every, n, check_every))
        snap_steps, snaps, violations = [], [], []
        if snapshot_every:
            snap_steps.append(0)
            snaps.append(rho.copy())

        viol = np.zeros(3, dtype=np.int64)
        first_bad = -1
        start = 0
        for stop in sorted(stops):
            before = int(viol[1])
            self._call(rho, inc, given_dy, dy, mean_x, mean_p, pur, start, stop, check_each_step, viol)
            if before == 0 and viol[1] > 0:
                first_bad = start + int(viol[2])
            if snapshot_every and stop % snapshot_every == 0 and stop > 0:
                snap_steps.append(stop)
                snaps.append(rho.copy())
            if check_every and (stop % check_every == 0 or stop == n):
                bad = density_matrix_violations(rho)
                if not given_dy:
                    check_truncation(rho)
                if bad:
                    violations.append((stop, bad))
            start = stop
        return KrausRun(
            rho, dy, mean_x, mean_p, pur, np.array(snap_steps, dtype=int), snaps, violations,
            int(viol[0]), int(viol[1]), first_bad,
        )

    def _call(self, rho, inc, given_dy, dy, mean_x, mean_p, pur, start, stop, check=False, viol=None):
        if viol is None:
            viol = np.zeros(3, dtype=np.int64)
        status, where = self.kernels.sme_run(
            rho,
            self.hterms,
            self.hbw,
            self.cterm,
            self.cbw,
            self.mterms,
            self.bw,
            self.jumps,
            self.jbw,
            self.xband,
            self.pband,
            float(self.ops.alpha),
            float(self.ops.dt),
            float(self.ops.gain),
            inc[start:stop],
            bool(given_dy),
            dy[start:stop],
            mean_x[start : stop + 1],
            mean_p[start : stop + 1],
            pur[start : stop + 1],
            bool(check),
            TRACE_TOL,
            PSD_TOL,
            viol,
        )
        if status == 1:
            raise NonFiniteIncrementError(f"non-finite measurement increment at step {start + where}")
        if status == 2:
            raise NumericalInvariantError(f"Kraus map lost positivity of the trace at step {start + where}")

    def step(self, rho: np.ndarray, dy: float) -> np.ndarray:
        """Advance ``rho`` by one step given the measurement increment ``dy``."""
        return self.run(rho, np.array([dy]), given_dy=True).rho


def rouchon_step(rho: np.ndarray, dy: float, params: ModelParams, backend: str | None = None) -> np.ndarray:
    """One positivity-preserving step driven by the measurement increment ``dy``.

    Both integration modes call this update: the truth simulation forms
    ``dy`` from its own state and a fresh Wiener increment, the estimator
    reads it from the record. The feedback phase is taken from ``rho``.
    """
    return _integrator(params, backend).step(rho, dy)


_INTEGRATORS: dict = {}


def _integrator(params: ModelParams, backend: str | None) -> KrausIntegrator:
    key = (params, backend)
    if key not in _INTEGRATORS:
        if len(_INTEGRATORS) > 16:
            _INTEGRATORS.clear()
        _INTEGRATORS[key] = KrausIntegrator(SMEOperators.from_params(params), backend)
    return _INTEGRATORS[key]


def _check_run(run: KrausRun):
    if run.step_violations:
        raise NumericalInvariantError(
            f"{run.step_violations} of {run.step_checks} steps broke trace or positivity; "
            f"first after step {run.first_bad_step}"
        )
    if run.violations:
        step, msgs = run.violations[0]
        raise NumericalInvariantError(f"density matrix invalid after step {step}: {', '.join(msgs)}")


def simulate_truth(
    params: ModelParams,
    initial_rho: np.ndarray | None = None,
    steps: int = 1000,
    rng_seed: int | np.random.SeedSequence | None = 0,
    snapshot_every: int | None = 100,
    check_every: int | None = None,
    backend: str | None = None,
    check_each_step: bool = False,
) -> tuple[TrajectoryLog, MeasurementRecord]:
    """Simulate the true quantum trajectory and the record it emits.

    The initial state defaults to the thermal state of the environment.
    Invariants are checked at every snapshot (or every ``check_every``
    steps, or after every step with ``check_each_step``) and a violation
    raises :class:`NumericalInvariantError`.
    """
    if initial_rho is None:
        initial_rho = thermal_state(params.n_bar, params.dim)
    rng = np.random.default_rng(rng_seed)
    dw = rng.standard_normal(int(steps)) * math.sqrt(params.dt)
    run = _integrator(params, backend).run(
        initial_rho, dw, given_dy=False, snapshot_every=snapshot_every,
        check_every=check_every or snapshot_every, check_each_step=check_each_step,
    )
    _check_run(run)
    seed = rng_seed if isinstance(rng_seed, (int, np.integer)) else None
    log = TrajectoryLog(
        times=np.arange(steps + 1) * params.dt,
        mean_x=run.mean_x,
        mean_p=run.mean_p,
        purity=run.purity,
        snapshot_steps=run.snapshot_steps,
        snapshots=run.snapshots,
    )
    record = MeasurementRecord(params.dt, run.dy, seed=seed, params_hash=params.digest())
    return log, record


def estimate_conditional(
    record: MeasurementRecord,
    params: ModelParams,
    initial_rho: np.ndarray | None = None,
    snapshot_every: int | None = 100,
    check_every: int | None = None,
    backend: str | None = None,
    check_each_step: bool = False,
) -> TrajectoryLog:
    """Integrate the conditional state along a recorded measurement.

    Starts from the maximally mixed state unless ``initial_rho`` is given.
    The log carries the innovations ``dy - sqrt(8 k eta) <x>_c dt``.
    """
    if not math.isclose(record.dt, params.dt, rel_tol=1e-12, abs_tol=0.0):
        raise RecordMismatchError(f"record dt {record.dt} differs from model dt {params.dt}")
    if initial_rho is None:
        initial_rho = maximally_mixed(params.dim)
    run = _integrator(params, backend).run(
        initial_rho, record.increments, given_dy=True, snapshot_every=snapshot_every,
        check_every=check_every or snapshot_every, check_each_step=check_each_step,
    )
    _check_run(run)
    innovations = record.increments - params.record_gain * run.mean_x[:-1] * params.dt
    return TrajectoryLog(
        times=np.arange(record.steps + 1) * params.dt,
        mean_x=run.mean_x,
        mean_p=run.mean_p,
        purity=run.purity,
        snapshot_steps=run.snapshot_steps,
        snapshots=run.snapshots,
        innovations=innovations,
    )
