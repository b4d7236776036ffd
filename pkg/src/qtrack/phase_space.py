"""Phase-space fields: Wigner functions, particle histograms and their comparison.

A field lives on a rectangular grid of ``n_x × n_p`` points and is indexed
``values[ix, ip]``. Histogram cells are centred on the grid points, so cell
``i`` along x covers ``[x_i - dx/2, x_i + dx/2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError
from .params import CYCLE_TIME

__all__ = [
    "PhaseSpaceGrid",
    "PhaseSpaceField",
    "NormalizationWarning",
    "KL_FLOOR_MASS",
    "wigner",
    "wigner_many",
    "ensemble_field",
    "positive_part",
    "kl_divergence",
    "trajectory_error_stats",
]

KL_FLOOR_MASS = 1e-12
WIGNER_NORM_TOL = 1e-2


class NormalizationWarning(UserWarning):
    """A Wigner field misses unit mass by more than the grid tolerance."""


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Rectangular grid of ``n_x × n_p`` points including both bounds."""

    x_min: float = -6.0
    x_max: float = 6.0
    p_min: float = -6.0
    p_max: float = 6.0
    n_x: int = 201
    n_p: int = 201

    def __post_init__(self):
        bad = []
        if int(self.n_x) != self.n_x or self.n_x < 2:
            bad.append(f"n_x >= 2 violated (got {self.n_x})")
        if int(self.n_p) != self.n_p or self.n_p < 2:
            bad.append(f"n_p >= 2 violated (got {self.n_p})")
        if not self.x_max > self.x_min:
            bad.append("x_max > x_min violated")
        if not self.p_max > self.p_min:
            bad.append("p_max > p_min violated")
        if bad:
            raise ValueError("invalid grid: " + "; ".join(bad))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / (self.n_p - 1)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dp

    @property
    def xs(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    @property
    def ps(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.n_p)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ps, indexing="ij")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("x_min", "x_max", "p_min", "p_max", "n_x", "n_p")}


@dataclass(frozen=True, eq=False)
class PhaseSpaceField:
    """Scalar field on a grid.

    ``mode`` is ``'wigner'`` for quasi-probabilities (negative values allowed)
    or ``'pdf'`` for densities. ``meta`` carries diagnostics such as the
    out-of-bounds mass of a histogram.
    """

    grid: PhaseSpaceGrid
    values: np.ndarray
    mode: str = "pdf"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("wigner", "pdf"):
            raise ValueError(f"unknown field mode {self.mode!r}")
        if self.values.shape != (self.grid.n_x, self.grid.n_p):
            raise GridMismatchError(
                f"values of shape {self.values.shape} do not fit a {self.grid.n_x}x{self.grid.n_p} grid"
            )
        if self.mode == "pdf" and np.any(self.values < 0):
            raise ValueError("a pdf field cannot hold negative values")

    def mass(self) -> float:
        """Integral of the field, ``sum(values) dx dp``."""
        return float(self.values.sum() * self.grid.cell_area)

    def normalized(self) -> "PhaseSpaceField":
        m = self.mass()
        if not m > 0:
            raise ValueError("cannot normalise a field with non-positive mass")
        return PhaseSpaceField(self.grid, self.values / m, self.mode, dict(self.meta))


def _laguerre_rows(order: int, count: int, b: np.ndarray) -> np.ndarray:
    """Rows ``n = 0..count-1`` of ``(-1)^n sqrt(order! n! / (n+order)!) L_n^order(b)``."""
    out = np.empty((count, b.size))
    out[0] = 1.0
    if count > 1:
        out[1] = -(order + 1.0 - b) / math.sqrt(order + 1.0)
    for n in range(1, count - 1):
        c1 = (2 * n + 1 + order - b) / math.sqrt((n + 1.0) * (n + 1.0 + order))
        c2 = math.sqrt(n * (n + order) / ((n + 1.0) * (n + 1.0 + order)))
        out[n + 1] = -c1 * out[n] - c2 * out[n - 1]
    return out


def wigner_many(rhos, grid: PhaseSpaceGrid = PhaseSpaceGrid(), check: bool = True) -> list[PhaseSpaceField]:
    """Wigner functions of several density matrices of equal size on one grid.

    Uses the Fock-basis expansion

        W = (1/π) e^{-B/2} Re Σ_L A^L / sqrt(L!) Σ_n c_{n,L} ρ_{n,n+L} ℓ_n^L(B)

    with ``A = sqrt(2)(x + ip)``, ``B = |A|²``, ``c = 1`` on the diagonal and
    ``2`` above it, and ``ℓ`` the normalised Laguerre functions. Laguerre
    values depend on the radius only, so they are evaluated once per distinct
    radius and shared by every matrix in the batch.
    """
    rhos = [np.asarray(r) for r in rhos]
    if not rhos:
        return []
    dim = rhos[0].shape[0]
    for r in rhos:
        if r.shape != (dim, dim):
            raise ValueError(f"density matrices must all be {dim}x{dim}, got {r.shape}")
    stack = np.stack(rhos)
    xg, pg = grid.mesh()
    a = math.sqrt(2.0) * (xg + 1j * pg).ravel()
    b_full = (a.real**2 + a.imag**2)
    b_unique, inverse = np.unique(np.round(b_full, 12), return_inverse=True)

    acc = np.zeros((len(rhos), a.size))
    power = np.ones(a.size, dtype=complex)
    for order in range(dim):
        if order > 0:
            power *= a / math.sqrt(order)
        coeffs = np.diagonal(stack, offset=order, axis1=1, axis2=2)
        if order > 0:
            coeffs = 2.0 * coeffs
        if not np.any(coeffs):
            continue
        table = _laguerre_rows(order, dim - order, b_unique)
        s = coeffs @ table
        acc += (power[None, :] * s[:, inverse]).real
    acc *= np.exp(-0.5 * b_full)[None, :] / math.pi

    out = []
    for vals in acc:
        f = PhaseSpaceField(grid, vals.reshape(grid.n_x, grid.n_p), "wigner")
        residual = f.mass() - 1.0
        f.meta["normalization_residual"] = residual
        if check and abs(residual) > WIGNER_NORM_TOL:
            warnings.warn(
                f"Wigner field integrates to {1 + residual:.4f} on this grid; "
                "widen or refine the grid",
                NormalizationWarning,
                stacklevel=2,
            )
        out.append(f)
    return out


def wigner(rho: np.ndarray, grid: PhaseSpaceGrid = PhaseSpaceGrid(), check: bool = True) -> PhaseSpaceField:
    """Wigner function of one density matrix; see :func:`wigner_many`."""
    return wigner_many([rho], grid, check)[0]


def ensemble_field(x, p, weights, grid: PhaseSpaceGrid = PhaseSpaceGrid()) -> PhaseSpaceField:
    """Histogram density of weighted particles.

    Each weight is added to the cell containing its particle and divided by
    the cell area. Particles outside the grid are dropped and their count
    and weight reported in ``meta``.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    w = np.asarray(weights, dtype=float)
    ix = np.floor((x - grid.x_min) / grid.dx + 0.5).astype(np.int64)
    ip = np.floor((p - grid.p_min) / grid.dp + 0.5).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.n_x) & (ip >= 0) & (ip < grid.n_p)
    counts = np.bincount(ix[inside] * grid.n_p + ip[inside], weights=w[inside], minlength=grid.n_x * grid.n_p)
    values = counts.reshape(grid.n_x, grid.n_p) / grid.cell_area
    meta = {
        "out_of_bounds_count": int(np.count_nonzero(~inside)),
        "out_of_bounds_mass": float(w[~inside].sum()),
    }
    return PhaseSpaceField(grid, values, "pdf", meta)


def positive_part(f: PhaseSpaceField) -> PhaseSpaceField:
    """Clip a Wigner field at zero and renormalise it to unit mass."""
    if f.mode != "wigner":
        raise ValueError("positive_part expects a Wigner field")
    clipped = np.clip(f.values, 0.0, None)
    mass = clipped.sum() * f.grid.cell_area
    if not mass > 0:
        raise ValueError("Wigner field has no positive mass")
    meta = dict(f.meta)
    meta["clipped_mass"] = float(-np.clip(f.values, None, 0.0).sum() * f.grid.cell_area)
    return PhaseSpaceField(f.grid, clipped / mass, "pdf", meta)


def kl_divergence(p1: PhaseSpaceField, p2: PhaseSpaceField, tol: float = 1e-6) -> float:
    """Discrete ``KL(p1 || p2) = Σ p1 ln(p1 / p2) dx dp``.

    Cells with ``p1 = 0`` contribute nothing. Empty ``p2`` cells under
    occupied ``p1`` cells take the floor value ``KL_FLOOR_MASS / (dx dp)``
    so disjoint supports give a large finite value.
    """
    if p1.grid != p2.grid:
        raise GridMismatchError("KL divergence needs both fields on the same grid")
    for name, f in (("first", p1), ("second", p2)):
        if np.any(f.values < 0):
            raise ValueError(f"{name} field has negative values")
        if abs(f.mass() - 1.0) > tol:
            raise ValueError(f"{name} field is not normalised (mass {f.mass():.6g})")
    area = p1.grid.cell_area
    floor = KL_FLOOR_MASS / area
    mask = p1.values > 0
    a = p1.values[mask]
    b = p2.values[mask]
    b = np.where(b > 0.0, b, floor)
    return float(np.sum(a * np.log(a / b)) * area)


def trajectory_error_stats(truth, estimate, discard_transient: float = 20.0) -> tuple[float, float]:
    """Standard deviations of the x and p estimation errors after a transient.

    ``discard_transient`` is measured in oscillator cycles; log entries
    earlier than that are dropped.
    """
    if len(truth.times) != len(estimate.times):
        raise ValueError(f"logs differ in length: {len(truth.times)} vs {len(estimate.times)}")
    keep = np.asarray(truth.times) >= discard_transient * CYCLE_TIME - 1e-9
    if not np.any(keep):
        return float("nan"), float("nan")
    ex = np.asarray(truth.mean_x)[keep] - np.asarray(estimate.mean_x)[keep]
    ep = np.asarray(truth.mean_p)[keep] - np.asarray(estimate.mean_p)[keep]
    return float(np.std(ex)), float(np.std(ep))
