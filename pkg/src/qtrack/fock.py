"""Operators and density matrices in a truncated Fock basis.

Operators are plain ``complex128`` arrays of shape ``(dim, dim)``. The
quadratures follow ``x = (a + a†)/√2`` and ``p = i(a† - a)/√2`` so that
``[x, p] = i`` away from the truncation edge.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import InvalidDimensionError
from .params import thermal_occupancy

__all__ = [
    "InvalidDimensionError",
    "TruncationWarning",
    "build_ladder_ops",
    "build_quadratures",
    "number_operator",
    "expectation",
    "purity",
    "thermal_state",
    "thermal_occupancy",
    "fock_state",
    "coherent_state",
    "maximally_mixed",
    "density_matrix_violations",
    "tail_population",
    "check_truncation",
]


class TruncationWarning(UserWarning):
    """The top of the Fock ladder holds non-negligible population."""


def _check_dim(dim: int) -> int:
    if int(dim) != dim or dim < 2:
        raise InvalidDimensionError(f"basis dimension must be an integer >= 2, got {dim}")
    return int(dim)


def build_ladder_ops(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the lowering and raising operators ``(a, a†)``."""
    dim = _check_dim(dim)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)
    return a, a.conj().T.copy()


def build_quadratures(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the position and momentum quadratures ``(x, p)``."""
    a, ad = build_ladder_ops(dim)
    x = (a + ad) / math.sqrt(2.0)
    p = 1j * (ad - a) / math.sqrt(2.0)
    return x, p


def number_operator(dim: int) -> np.ndarray:
    dim = _check_dim(dim)
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def expectation(op: np.ndarray, rho: np.ndarray) -> complex:
    """Tr[op rho]."""
    if op.shape != rho.shape:
        raise InvalidDimensionError(f"operator {op.shape} and state {rho.shape} differ in shape")
    # Tr[AB] = sum_ij A_ij B_ji without forming the product.
    return complex(np.einsum("ij,ji->", op, rho))


def purity(rho: np.ndarray) -> float:
    """Tr[rho^2] for a Hermitian rho."""
    return float(np.vdot(rho, rho).real)


def thermal_state(n_bar: float, dim: int) -> np.ndarray:
    """Thermal state with mean occupancy ``n_bar``, renormalised on the truncation."""
    dim = _check_dim(dim)
    if n_bar < 0:
        raise ValueError(f"mean occupancy must be non-negative, got {n_bar}")
    if n_bar == 0:
        return fock_state(0, dim)
    ratio = n_bar / (n_bar + 1.0)
    pops = ratio ** np.arange(dim)
    pops /= pops.sum()
    return np.diag(pops).astype(complex)


def fock_state(n: int, dim: int) -> np.ndarray:
    dim = _check_dim(dim)
    if not 0 <= n < dim:
        raise InvalidDimensionError(f"level {n} outside basis of size {dim}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return rho


def coherent_state(alpha: complex, dim: int) -> np.ndarray:
    """Projector onto the coherent state |alpha>, renormalised on the truncation.

    With the quadrature convention above, ``<x> = √2 Re(alpha)`` and
    ``<p> = √2 Im(alpha)``.
    """
    dim = _check_dim(dim)
    n = np.arange(dim)
    log_fact = np.array([math.lgamma(k + 1.0) for k in n])
    amp = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * log_fact) * np.ones(dim, dtype=complex)
    if alpha != 0:
        amp *= alpha ** n
    else:
        amp[1:] = 0.0
    amp /= np.linalg.norm(amp)
    return np.outer(amp, amp.conj())


def maximally_mixed(dim: int) -> np.ndarray:
    dim = _check_dim(dim)
    return np.eye(dim, dtype=complex) / dim


def density_matrix_violations(
    rho: np.ndarray,
    herm_tol: float = 1e-10,
    trace_tol: float = 1e-10,
    psd_tol: float = 1e-8,
) -> list[str]:
    """Check the density-matrix invariants; an empty list means valid.

    Positivity is tested with a Cholesky factorisation of ``rho + psd_tol·I``,
    which succeeds exactly when the smallest eigenvalue exceeds ``-psd_tol``.
    """
    out = []
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return [f"not a square matrix: shape {rho.shape}"]
    if not np.all(np.isfinite(rho)):
        return ["non-finite entries"]
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        out.append(f"hermiticity residual {herm:.3e}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        out.append(f"trace deviation {abs(tr - 1.0):.3e}")
    try:
        np.linalg.cholesky(0.5 * (rho + rho.conj().T) + psd_tol * np.eye(rho.shape[0]))
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
        out.append(f"smallest eigenvalue {lam:.3e}")
    pur = purity(rho)
    if not 0.0 < pur <= 1.0 + 1e-10:
        out.append(f"purity {pur:.6f} outside (0, 1]")
    return out


def tail_population(rho: np.ndarray, fraction: float = 0.1) -> float:
    """Population held in the top ``fraction`` of Fock levels."""
    dim = rho.shape[0]
    top = max(1, int(math.ceil(fraction * dim)))
    return float(np.diagonal(rho)[-top:].real.sum())


def check_truncation(rho: np.ndarray, threshold: float = 1e-4) -> float:
    """Warn when the top 10% of levels hold more than ``threshold`` of the population."""
    tail = tail_population(rho)
    total = float(np.trace(rho).real)
    if tail > threshold * total:
        warnings.warn(
            f"top 10% of Fock levels hold {tail / total:.2e} of the population; "
            f"raise the truncation above {rho.shape[0]}",
            TruncationWarning,
            stacklevel=2,
        )
    return tail
