# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the SME integrator and the particle filter.

Operators are passed in row band storage: ``band[bw + d, i] = A[i, i + d]``.
Every function here has a numpy twin in ``_fallback.py`` with the same
signature and the same arithmetic order where it matters.
"""

import numpy as np

from libc.math cimport exp, fabs, isfinite
from scipy.linalg.cython_lapack cimport zpotrf

ctypedef double complex cplx



cdef inline double _phase_factor(double x, double y, double alpha) noexcept nogil:
    # 1 + alpha sin 2φ = 1 + alpha 2xy/(x² + y²), rescaled when the squares under- or overflow
    cdef double r2 = x * x + y * y
    cdef double m
    if x == 0.0 and y == 0.0:
        return 1.0
    if not (1e-200 < r2 < 1e200):
        m = fabs(x) if fabs(x) > fabs(y) else fabs(y)
        x = x / m
        y = y / m
        r2 = x * x + y * y
    return 1.0 + alpha * 2.0 * x * y / r2

cdef inline double _expect_re(const cplx[:, ::1] band, int bw, double* rr, double* ri, int dim) noexcept nogil:
    # Re Tr[A rho] = Re sum_i sum_d A[i, i+d] rho[i+d, i]
    cdef double acc = 0.0
    cdef int i, d, j
    cdef cplx a
    for i in range(dim):
        for d in range(-bw, bw + 1):
            j = i + d
            if j >= 0 and j < dim:
                a = band[bw + d, i]
                acc += a.real * rr[j * dim + i] - a.imag * ri[j * dim + i]
    return acc


cdef inline double _purity(double* rr, double* ri, int dim) noexcept nogil:
    cdef double diag = 0.0, off = 0.0
    cdef int i, j
    for i in range(dim):
        diag += rr[i * dim + i] * rr[i * dim + i]
        for j in range(i + 1, dim):
            off += rr[i * dim + j] * rr[i * dim + j] + ri[i * dim + j] * ri[i * dim + j]
    return diag + 2.0 * off


cdef void _sandwich(double* br, double* bi, unsigned char* nz, int bw,
                    double* rr, double* ri, double* wr, double* wi,
                    double* outr, double* outi, int dim) noexcept nogil:
    # out += B rho B^dagger on the upper triangle; split real/imag storage,
    # band rows with nz[d] == 0 are skipped.
    cdef int i, j, d, r, lo, jlo, jhi, nb = 2 * bw + 1
    cdef double ar, ai, xr, xi
    cdef double* wrow_r
    cdef double* wrow_i
    cdef double* rrow_r
    cdef double* rrow_i
    cdef double* orow_r
    cdef double* orow_i
    cdef double* cr
    cdef double* ci
    for i in range(dim):
        lo = i - bw
        if lo < 0:
            lo = 0
        wrow_r = wr + i * dim
        wrow_i = wi + i * dim
        for j in range(lo, dim):
            wrow_r[j] = 0.0
            wrow_i[j] = 0.0
        for d in range(-bw, bw + 1):
            r = i + d
            if r < 0 or r >= dim or not nz[bw + d]:
                continue
            ar = br[(bw + d) * dim + i]
            ai = bi[(bw + d) * dim + i]
            if ar == 0.0 and ai == 0.0:
                continue
            rrow_r = rr + r * dim
            rrow_i = ri + r * dim
            for j in range(lo, dim):
                wrow_r[j] += ar * rrow_r[j] - ai * rrow_i[j]
                wrow_i[j] += ar * rrow_i[j] + ai * rrow_r[j]
    for i in range(dim):
        orow_r = outr + i * dim
        orow_i = outi + i * dim
        for d in range(-bw, bw + 1):
            if not nz[bw + d]:
                continue
            jlo = i
            if -d > jlo:
                jlo = -d
            jhi = dim
            if dim - d < jhi:
                jhi = dim - d
            wrow_r = wr + i * dim + d
            wrow_i = wi + i * dim + d
            cr = br + (bw + d) * dim
            ci = bi + (bw + d) * dim
            for j in range(jlo, jhi):
                xr = wrow_r[j]
                xi = wrow_i[j]
                orow_r[j] += xr * cr[j] + xi * ci[j]
                orow_i[j] += xi * cr[j] - xr * ci[j]


cdef void _band_lu(cplx* lu, int bw, int dim) noexcept nogil:
    # In-place LU without pivoting of a row-band matrix lu[i * nb + bw + d] = A[i, i + d].
    # Safe for A = I + iK with K Hermitian, whose Hermitian part is positive definite.
    cdef int nb = 2 * bw + 1
    cdef int kk, i, j, top
    cdef cplx piv, l
    for kk in range(dim):
        piv = lu[kk * nb + bw]
        top = kk + bw
        if top > dim - 1:
            top = dim - 1
        for i in range(kk + 1, top + 1):
            l = lu[i * nb + bw + kk - i]
            if l.real == 0.0 and l.imag == 0.0:
                continue
            l = l / piv
            lu[i * nb + bw + kk - i] = l
            for j in range(kk + 1, top + 1):
                lu[i * nb + bw + j - i] = lu[i * nb + bw + j - i] - l * lu[kk * nb + bw + j - kk]


cdef inline void _row_axpy(double ar, double ai, double* xr, double* xi,
                           double* yr, double* yi, int n) noexcept nogil:
    # y += a x for complex a and complex rows in split storage
    cdef int j
    for j in range(n):
        yr[j] += ar * xr[j] - ai * xi[j]
        yi[j] += ar * xi[j] + ai * xr[j]


cdef void _left_cayley(cplx* lu, int bw, double* inr, double* ini,
                       double* outr, double* outi, int dim) noexcept nogil:
    # out = A^-1 (2I - A) in = 2 A^-1 in - in, with A = LU from _band_lu.
    cdef int nb = 2 * bw + 1
    cdef int i, j, r, lo, hi
    cdef cplx c
    cdef double cr, ci, tr, ti
    for i in range(dim * dim):
        outr[i] = inr[i]
        outi[i] = ini[i]
    for i in range(1, dim):
        lo = i - bw
        if lo < 0:
            lo = 0
        for r in range(lo, i):
            c = lu[i * nb + bw + r - i]
            if c.real == 0.0 and c.imag == 0.0:
                continue
            _row_axpy(-c.real, -c.imag, outr + r * dim, outi + r * dim,
                      outr + i * dim, outi + i * dim, dim)
    for i in range(dim - 1, -1, -1):
        hi = i + bw
        if hi > dim - 1:
            hi = dim - 1
        for r in range(i + 1, hi + 1):
            c = lu[i * nb + bw + r - i]
            if c.real == 0.0 and c.imag == 0.0:
                continue
            _row_axpy(-c.real, -c.imag, outr + r * dim, outi + r * dim,
                      outr + i * dim, outi + i * dim, dim)
        c = 1.0 / lu[i * nb + bw]
        cr = c.real
        ci = c.imag
        for j in range(dim):
            tr = outr[i * dim + j]
            ti = outi[i * dim + j]
            outr[i * dim + j] = cr * tr - ci * ti
            outi[i * dim + j] = cr * ti + ci * tr
    for i in range(dim * dim):
        outr[i] = 2.0 * outr[i] - inr[i]
        outi[i] = 2.0 * outi[i] - ini[i]


cdef void _adjoint(double* ar, double* ai, double* br, double* bi, int dim) noexcept nogil:
    # b = a^dagger, in 16 x 16 tiles to stay in cache
    cdef int i0, j0, i, j, i1, j1
    for i0 in range(0, dim, 16):
        i1 = i0 + 16
        if i1 > dim:
            i1 = dim
        for j0 in range(0, dim, 16):
            j1 = j0 + 16
            if j1 > dim:
                j1 = dim
            for i in range(i0, i1):
                for j in range(j0, j1):
                    br[i * dim + j] = ar[j * dim + i]
                    bi[i * dim + j] = -ai[j * dim + i]


cdef int _psd_ok(double* rr, double* ri, cplx* work, int dim, double shift) noexcept nogil:
    # Cholesky of rho + shift I succeeds iff the smallest eigenvalue exceeds -shift.
    cdef int i, info = 0, n = dim
    cdef char uplo = b'U'
    for i in range(dim * dim):
        work[i] = rr[i] + 1j * ri[i]
    for i in range(dim):
        work[i * dim + i] = work[i * dim + i] + shift
    zpotrf(&uplo, &n, work, &n, &info)
    return info == 0


cdef void _upper_to_full(double* outr, double* outi, double* rr, double* ri,
                         double scale, int dim) noexcept nogil:
    # rho = scale * out on the upper triangle, mirrored to a Hermitian matrix
    cdef int i, j
    for i in range(dim):
        rr[i * dim + i] = outr[i * dim + i] * scale
        ri[i * dim + i] = 0.0
        for j in range(i + 1, dim):
            rr[i * dim + j] = outr[i * dim + j] * scale
            ri[i * dim + j] = outi[i * dim + j] * scale
            rr[j * dim + i] = rr[i * dim + j]
            ri[j * dim + i] = -ri[i * dim + j]


cdef inline void _zero_upper(double* outr, double* outi, int dim) noexcept nogil:
    cdef int i, j
    for i in range(dim):
        for j in range(i, dim):
            outr[i * dim + j] = 0.0
            outi[i * dim + j] = 0.0


def sme_run(cplx[:, ::1] rho,
            const cplx[:, :, ::1] hterms, int hbw,
            const cplx[:, ::1] cterm, int cbw,
            const cplx[:, :, ::1] mterms, int bw,
            const cplx[:, :, ::1] jumps, int jbw,
            const cplx[:, ::1] xband, const cplx[:, ::1] pband,
            double alpha, double dt, double gain,
            const double[::1] inc, bint given_dy,
            double[::1] dy_out, double[::1] mean_x, double[::1] mean_p, double[::1] pur,
            bint check, double trace_tol, double psd_tol, long long[::1] viol):
    """Advance ``rho`` in place by ``len(inc)`` steps.

    With ``check`` the trace and positivity of every normalised state are
    verified; ``viol`` accumulates ``[checks, violations, first bad step]``
    with the step counted from the start of this call.

    Each step applies the Cayley propagator of ``hterms[0] + s hterms[1]``
    (bands pre-scaled by dt/2), the congruence ``rho -> C rho C`` with the
    Hermitian ``cterm``, then the Kraus map built from
    ``mterms = [M0, sqrt(eta) L, eta/2 L^2]`` and the jump operators.
    Returns ``(status, step)``; status 0 is success, 1 a non-finite
    increment and 2 a non-positive trace at ``step``.
    """
    cdef int dim = rho.shape[0]
    cdef int nb = 2 * bw + 1
    cdef int hnb = 2 * hbw + 1
    cdef int njump = jumps.shape[0]
    cdef Py_ssize_t nsteps = inc.shape[0]
    cdef double[:, ::1] rr = np.ascontiguousarray(np.real(rho))
    cdef double[:, ::1] ri = np.ascontiguousarray(np.imag(rho))
    cdef double[:, ::1] wr = np.empty((dim, dim))
    cdef double[:, ::1] wi = np.empty((dim, dim))
    cdef double[:, ::1] outr = np.empty((dim, dim))
    cdef double[:, ::1] outi = np.empty((dim, dim))
    cdef double[:, :, ::1] htr = np.ascontiguousarray(np.real(hterms))
    cdef double[:, :, ::1] hti = np.ascontiguousarray(np.imag(hterms))
    cdef cplx[::1] lu = np.empty(dim * hnb, dtype=complex)
    cdef double[:, :, ::1] mtr = np.ascontiguousarray(np.real(mterms))
    cdef double[:, :, ::1] mti = np.ascontiguousarray(np.imag(mterms))
    cdef double[:, ::1] mbr = np.empty((nb, dim))
    cdef double[:, ::1] mbi = np.empty((nb, dim))
    cdef double[:, :, ::1] jr = np.ascontiguousarray(np.real(jumps))
    cdef double[:, :, ::1] ji = np.ascontiguousarray(np.imag(jumps))
    cdef double[:, ::1] ctr = np.ascontiguousarray(np.real(cterm))
    cdef double[:, ::1] cti = np.ascontiguousarray(np.imag(cterm))
    cdef unsigned char[::1] cnz = (np.abs(np.asarray(cterm)).sum(axis=1) > 0).astype(np.uint8)
    cdef unsigned char[::1] mnz = (np.abs(np.asarray(mterms)).sum(axis=(0, 2)) > 0).astype(np.uint8)
    cdef unsigned char[:, ::1] jnz = np.ascontiguousarray(
        (np.abs(np.asarray(jumps)).sum(axis=2) > 0).astype(np.uint8))
    cdef Py_ssize_t n
    cdef int i, j, kk, jj
    cdef double ex, ep, dy, s, q, tr, ar, ai
    cdef double* prr = &rr[0, 0]
    cdef double* pri = &ri[0, 0]
    cdef cplx[::1] chol = np.empty(dim * dim if check else 1, dtype=complex)

    with nogil:
        ex = _expect_re(xband, 1, prr, pri, dim)
        ep = _expect_re(pband, 1, prr, pri, dim)
        mean_x[0] = ex
        mean_p[0] = ep
        pur[0] = _purity(prr, pri, dim)
        for n in range(nsteps):
            if given_dy:
                dy = inc[n]
            else:
                dy = gain * ex * dt + inc[n]
            if not isfinite(dy):
                with gil:
                    _store(rho, rr, ri)
                    return 1, n
            dy_out[n] = dy
            s = _phase_factor(ex, ep, alpha)
            # Cayley factor A = I + i a with a = (dt/2) H, stored row-band
            for kk in range(hnb):
                for i in range(dim):
                    ar = htr[0, kk, i] + s * htr[1, kk, i]
                    ai = hti[0, kk, i] + s * hti[1, kk, i]
                    lu[i * hnb + kk] = (-ai) + 1j * ar
                    if kk == hbw:
                        lu[i * hnb + kk] = lu[i * hnb + kk] + 1.0
            _band_lu(&lu[0], hbw, dim)
            # rho <- U rho U^dagger = U (U rho)^dagger for Hermitian rho
            _left_cayley(&lu[0], hbw, prr, pri, &outr[0, 0], &outi[0, 0], dim)
            _adjoint(&outr[0, 0], &outi[0, 0], &wr[0, 0], &wi[0, 0], dim)
            _left_cayley(&lu[0], hbw, &wr[0, 0], &wi[0, 0], prr, pri, dim)
            # rho <- C rho C, which makes the noise-averaged Kraus map trace preserving
            _zero_upper(&outr[0, 0], &outi[0, 0], dim)
            _sandwich(&ctr[0, 0], &cti[0, 0], &cnz[0], cbw, prr, pri,
                      &wr[0, 0], &wi[0, 0], &outr[0, 0], &outi[0, 0], dim)
            _upper_to_full(&outr[0, 0], &outi[0, 0], prr, pri, 1.0, dim)
            q = dy * dy - dt
            for kk in range(nb):
                for i in range(dim):
                    mbr[kk, i] = mtr[0, kk, i] + dy * mtr[1, kk, i] + q * mtr[2, kk, i]
                    mbi[kk, i] = mti[0, kk, i] + dy * mti[1, kk, i] + q * mti[2, kk, i]
            _zero_upper(&outr[0, 0], &outi[0, 0], dim)
            _sandwich(&mbr[0, 0], &mbi[0, 0], &mnz[0], bw, prr, pri,
                      &wr[0, 0], &wi[0, 0], &outr[0, 0], &outi[0, 0], dim)
            for jj in range(njump):
                _sandwich(&jr[jj, 0, 0], &ji[jj, 0, 0], &jnz[jj, 0], jbw, prr, pri,
                          &wr[0, 0], &wi[0, 0], &outr[0, 0], &outi[0, 0], dim)
            tr = 0.0
            for i in range(dim):
                tr += outr[i, i]
            if not (tr > 0.0 and isfinite(tr)):
                with gil:
                    _store(rho, rr, ri)
                    return 2, n
            _upper_to_full(&outr[0, 0], &outi[0, 0], prr, pri, 1.0 / tr, dim)
            if check:
                tr = 0.0
                for i in range(dim):
                    tr += rr[i, i]
                viol[0] += 1
                if fabs(tr - 1.0) > trace_tol or not _psd_ok(prr, pri, &chol[0], dim, psd_tol):
                    if viol[1] == 0:
                        viol[2] = n + 1
                    viol[1] += 1
            ex = _expect_re(xband, 1, prr, pri, dim)
            ep = _expect_re(pband, 1, prr, pri, dim)
            mean_x[n + 1] = ex
            mean_p[n + 1] = ep
            pur[n + 1] = _purity(prr, pri, dim)
    _store(rho, rr, ri)
    return 0, nsteps


cdef _store(cplx[:, ::1] rho, double[:, ::1] rr, double[:, ::1] ri):
    arr = np.asarray(rho)
    arr.real = np.asarray(rr)
    arr.imag = np.asarray(ri)


def pf_run(double[::1] x, double[::1] p, double[::1] w,
           const double[:, ::1] xi_back, const double[:, ::1] xi_th,
           const double[::1] u, const double[::1] dy,
           double dt, double alpha, double gamma, double damping,
           double noise_back, double noise_th, double gain, double threshold,
           double[::1] mean_x, double[::1] mean_p, double[::1] ess_out,
           unsigned char[::1] resampled):
    """Bootstrap filter steps: weight by ``dy``, resample if needed, propagate.

    ``xi_back`` and ``xi_th`` hold standard normals of shape ``(steps, N)``;
    ``u`` holds one uniform per step for systematic resampling.
    Returns ``(status, step)``; status 1 flags a degenerate ensemble.
    """
    cdef Py_ssize_t npart = x.shape[0]
    cdef Py_ssize_t nsteps = dy.shape[0]
    cdef double[::1] ll = np.empty(npart)
    cdef double[::1] xb = np.empty(npart)
    cdef double[::1] pb = np.empty(npart)
    cdef Py_ssize_t n, j, idx
    cdef double m, tot, s2, ess, resid, pos, c, xj, pj, pn, s, mx, mp
    cdef double two_dt = 2.0 * dt
    cdef double inv_n = 1.0 / npart

    with nogil:
        for n in range(nsteps):
            m = -1.0e308
            idx = -1
            for j in range(npart):
                resid = dy[n] - gain * x[j] * dt
                ll[j] = -(resid * resid) / two_dt
                if w[j] > 0.0 and (idx < 0 or ll[j] > m):
                    m = ll[j]
                    idx = j
            if idx < 0 or not isfinite(m):
                with gil:
                    return 1, n
            tot = 0.0
            for j in range(npart):
                w[j] = w[j] * exp(ll[j] - m)
                tot += w[j]
            if not (tot > 0.0 and isfinite(tot)):
                with gil:
                    return 1, n
            s2 = 0.0
            for j in range(npart):
                w[j] = w[j] / tot
                s2 += w[j] * w[j]
            ess = 1.0 / s2
            ess_out[n] = ess
            resampled[n] = 0
            if ess < threshold:
                resampled[n] = 1
                idx = 0
                c = w[0]
                for j in range(npart):
                    pos = (u[n] + j) / npart
                    while c <= pos and idx < npart - 1:
                        idx += 1
                        c += w[idx]
                    xb[j] = x[idx]
                    pb[j] = p[idx]
                for j in range(npart):
                    x[j] = xb[j]
                    p[j] = pb[j]
                    w[j] = inv_n
            mx = 0.0
            mp = 0.0
            for j in range(npart):
                xj = x[j]
                pj = p[j]
                s = _phase_factor(xj, pj, alpha)
                pn = (pj + (s * (-xj - gamma * xj * xj * xj) - damping * pj) * dt
                      + noise_back * xi_back[n, j] + noise_th * xi_th[n, j])
                xj = xj + pn * dt
                x[j] = xj
                p[j] = pn
                mx += w[j] * xj
                mp += w[j] * pn
            mean_x[n] = mx
            mean_p[n] = mp
    return 0, nsteps
