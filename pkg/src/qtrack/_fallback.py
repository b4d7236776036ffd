"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and in-place semantics match the compiled module exactly so the
two can be swapped at import time.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def phase_factor(x: float, y: float, alpha: float) -> float:
    """``1 + alpha sin 2φ`` with ``φ = atan2(y, x)``; 1 at the origin."""
    if x == 0.0 and y == 0.0:
        return 1.0
    r2 = x * x + y * y
    if not 1e-200 < r2 < 1e200:
        m = max(abs(x), abs(y))
        x, y = x / m, y / m
        r2 = x * x + y * y
    return 1.0 + alpha * 2.0 * x * y / r2


def phase_factors(x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """Elementwise :func:`phase_factor`, bit-identical to the scalar version."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    odd = ~((r2 > 1e-200) & (r2 < 1e200))
    if np.any(odd):
        m = np.maximum(np.abs(x), np.abs(y))
        scale = np.where(odd & (m > 0), m, 1.0)
        x, y = x / scale, y / scale
        r2 = x * x + y * y
    with np.errstate(invalid="ignore", divide="ignore"):
        s = 1.0 + alpha * 2.0 * x * y / r2
    return np.where(r2 > 0.0, s, 1.0)


def _band_matmul(band: np.ndarray, bw: int, rho: np.ndarray) -> np.ndarray:
    # (B rho)[i, :] = sum_d B[i, i+d] rho[i+d, :]
    dim = rho.shape[0]
    out = np.zeros_like(rho)
    for d in range(-bw, bw + 1):
        lo, hi = max(0, -d), min(dim, dim - d)
        if lo >= hi:
            continue
        out[lo:hi] += band[bw + d, lo:hi, None] * rho[lo + d : hi + d]
    return out


def _band_rmatmul_adj(work: np.ndarray, band: np.ndarray, bw: int) -> np.ndarray:
    # (W B^dagger)[:, j] = sum_d W[:, j+d] conj(B[j, j+d])
    dim = work.shape[0]
    out = np.zeros_like(work)
    for d in range(-bw, bw + 1):
        lo, hi = max(0, -d), min(dim, dim - d)
        if lo >= hi:
            continue
        out[:, lo:hi] += work[:, lo + d : hi + d] * band[bw + d, lo:hi].conj()
    return out


def _sandwich(band: np.ndarray, bw: int, rho: np.ndarray) -> np.ndarray:
    return _band_rmatmul_adj(_band_matmul(band, bw, rho), band, bw)


def _expect_re(band: np.ndarray, bw: int, rho: np.ndarray) -> float:
    dim = rho.shape[0]
    acc = 0.0
    for d in range(-bw, bw + 1):
        lo, hi = max(0, -d), min(dim, dim - d)
        if lo >= hi:
            continue
        idx = np.arange(lo, hi)
        acc += float(np.sum((band[bw + d, lo:hi] * rho[idx + d, idx]).real))
    return acc


def _purity(rho: np.ndarray) -> float:
    return float(np.vdot(rho, rho).real)


def _lapack_band(band: np.ndarray, bw: int) -> np.ndarray:
    # row band storage -> LAPACK layout ab[bw + i - j, j] = A[i, j]
    dim = band.shape[1]
    ab = np.zeros_like(band)
    for d in range(-bw, bw + 1):
        if d >= 0:
            ab[bw - d, d:] = band[bw + d, : dim - d]
        else:
            ab[bw - d, : dim + d] = band[bw + d, -d:]
    return ab


def _cayley_left(a_band: np.ndarray, hbw: int, mat: np.ndarray) -> np.ndarray:
    # (I + i a)^-1 (I - i a) mat for a Hermitian band a
    eye = np.zeros_like(a_band)
    eye[hbw] = 1.0
    rhs = _band_matmul(eye - 1j * a_band, hbw, mat)
    return solve_banded((hbw, hbw), _lapack_band(eye + 1j * a_band, hbw), rhs,
                        overwrite_b=True, check_finite=False)


def _psd_ok(rho: np.ndarray, shift: float) -> bool:
    try:
        np.linalg.cholesky(rho + shift * np.eye(rho.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def sme_run(rho, hterms, hbw, cterm, cbw, mterms, bw, jumps, jbw, xband, pband, alpha, dt, gain, inc, given_dy,
            dy_out, mean_x, mean_p, pur, check, trace_tol, psd_tol, viol):
    ex = _expect_re(xband, 1, rho)
    ep = _expect_re(pband, 1, rho)
    mean_x[0] = ex
    mean_p[0] = ep
    pur[0] = _purity(rho)
    for n in range(inc.shape[0]):
        dy = inc[n] if given_dy else gain * ex * dt + inc[n]
        if not np.isfinite(dy):
            return 1, n
        dy_out[n] = dy
        s = phase_factor(ex, ep, alpha)
        a_band = hterms[0] + s * hterms[1]
        half = _cayley_left(a_band, hbw, rho)
        rho1 = _cayley_left(a_band, hbw, half.conj().T)
        rho1 = _sandwich(cterm, cbw, rho1)
        rho1 = 0.5 * (rho1 + rho1.conj().T)
        mb = mterms[0] + dy * mterms[1] + (dy * dy - dt) * mterms[2]
        out = _sandwich(mb, bw, rho1)
        for jump in jumps:
            out += _sandwich(jump, jbw, rho1)
        tr = float(np.trace(out).real)
        if not (tr > 0.0 and np.isfinite(tr)):
            return 2, n
        out /= tr
        out = 0.5 * (out + out.conj().T)
        rho[...] = out
        if check:
            viol[0] += 1
            if abs(np.trace(rho).real - 1.0) > trace_tol or not _psd_ok(rho, psd_tol):
                if viol[1] == 0:
                    viol[2] = n + 1
                viol[1] += 1
        ex = _expect_re(xband, 1, rho)
        ep = _expect_re(pband, 1, rho)
        mean_x[n + 1] = ex
        mean_p[n + 1] = ep
        pur[n + 1] = _purity(rho)
    return 0, inc.shape[0]


def pf_run(x, p, w, xi_back, xi_th, u, dy, dt, alpha, gamma, damping, noise_back, noise_th,
           gain, threshold, mean_x, mean_p, ess_out, resampled):
    npart = x.shape[0]
    positions_base = np.arange(npart)
    for n in range(dy.shape[0]):
        resid = dy[n] - gain * x * dt
        ll = -(resid * resid) / (2.0 * dt)
        alive = w > 0.0
        if not alive.any():
            return 1, n
        m = ll[alive].max()
        if not np.isfinite(m):
            return 1, n
        w *= np.exp(ll - m)
        tot = w.sum()
        if not (tot > 0.0 and np.isfinite(tot)):
            return 1, n
        w /= tot
        ess = 1.0 / np.sum(w * w)
        ess_out[n] = ess
        resampled[n] = 0
        if ess < threshold:
            resampled[n] = 1
            positions = (u[n] + positions_base) / npart
            idx = np.minimum(np.searchsorted(np.cumsum(w), positions, side="right"), npart - 1)
            x[:] = x[idx]
            p[:] = p[idx]
            w[:] = 1.0 / npart
        s = phase_factors(x, p, alpha)
        pn = (p + (s * (-x - gamma * x * x * x) - damping * p) * dt
              + noise_back * xi_back[n] + noise_th * xi_th[n])
        x += pn * dt
        p[:] = pn
        mean_x[n] = np.dot(w, x)
        mean_p[n] = np.dot(w, p)
    return 0, dy.shape[0]
