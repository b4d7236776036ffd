"""Kernel backend selection.

The compiled extension is used when it imports; set ``QTRACK_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_compiled = None

if os.environ.get("QTRACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled

        BACKEND = "compiled"
    except ImportError:
        _compiled = None


def get_kernels(backend: str | None = None):
    """Return the kernel module for ``backend`` ('compiled', 'python' or None for default)."""
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    if backend == "python":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def compiled_available() -> bool:
    return _compiled is not None


def bandwidth(op: np.ndarray, tol: float = 0.0) -> int:
    """Largest |i - j| with a non-negligible entry."""
    rows, cols = np.nonzero(np.abs(op) > tol)
    if rows.size == 0:
        return 0
    return int(np.max(np.abs(rows - cols)))


def to_band(op: np.ndarray, bw: int) -> np.ndarray:
    """Row band storage: ``band[bw + d, i] = op[i, i + d]``, zero off the matrix."""
    dim = op.shape[0]
    band = np.zeros((2 * bw + 1, dim), dtype=complex)
    for d in range(-bw, bw + 1):
        lo, hi = max(0, -d), min(dim, dim - d)
        if lo < hi:
            idx = np.arange(lo, hi)
            band[bw + d, lo:hi] = op[idx, idx + d]
    return band


def from_band(band: np.ndarray, bw: int) -> np.ndarray:
    dim = band.shape[1]
    op = np.zeros((dim, dim), dtype=complex)
    for d in range(-bw, bw + 1):
        lo, hi = max(0, -d), min(dim, dim - d)
        if lo < hi:
            idx = np.arange(lo, hi)
            op[idx, idx + d] = band[bw + d, lo:hi]
    return op
