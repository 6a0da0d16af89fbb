"""Small complex-matrix utilities: principal singular triple and DFT codebook.

Complex matrices are plain ``complex128`` numpy arrays.  The interleaved
(real, imag) layout used on disk is produced by :func:`to_interleaved`.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError

MAX_POWER_ITERATIONS = 500
POWER_TOLERANCE = 1e-12
# power iteration runs on G^(2^k); squaring widens the eigen-gap ratio
_GRAM_SQUARINGS = 3


def to_interleaved(z: np.ndarray) -> np.ndarray:
    """Complex array -> real array with a trailing (re, im) pair flattened into the last axis."""
    z = np.asarray(z)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],), dtype=np.float64 if z.dtype == np.complex128 else np.float32)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def from_interleaved(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] % 2:
        raise DimensionError(f"interleaved length must be even, got {x.shape[-1]}")
    return x[..., 0::2] + 1j * x[..., 1::2]


def svd_principal(h, max_iter: int = MAX_POWER_ITERATIONS, tol: float = POWER_TOLERANCE):
    """Largest singular value and its singular vectors.

    Power iteration on the smaller Gram matrix (h h^H or h^H h).  The
    returned left vector has its largest-magnitude entry real and positive.
    An all-zero input is degenerate: ``(0.0, e1, e1)``.

    Returns ``(sigma1, u1, v1)`` with ``h @ v1 == sigma1 * u1``.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or min(h.shape) < 1:
        raise DimensionError(f"svd_principal needs a non-empty matrix, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("svd_principal: non-finite entries")
    m, n = h.shape
    if not np.any(h):
        u = np.zeros(m, complex)
        v = np.zeros(n, complex)
        u[0] = v[0] = 1.0
        return 0.0, u, v

    left = m <= n
    g = h @ h.conj().T if left else h.conj().T @ h
    gp = g / np.trace(g).real
    for _ in range(_GRAM_SQUARINGS):
        gp = gp @ gp
        gp = gp / np.trace(gp).real

    x = gp[:, int(np.argmax(np.linalg.norm(gp, axis=0)))].copy()
    x /= np.linalg.norm(x)
    for _ in range(max_iter):
        y = gp @ x
        y /= np.linalg.norm(y)
        done = np.linalg.norm(y - x) < tol
        x = y
        if done:
            break

    if left:
        u = x
        w = h.conj().T @ u
        sigma = float(np.linalg.norm(w))
        v = w / sigma
    else:
        v = x
        w = h @ v
        sigma = float(np.linalg.norm(w))
        u = w / sigma
    k = int(np.argmax(np.abs(u)))
    ph = np.conj(u[k]) / abs(u[k])
    u = u * ph
    v = v * ph
    u[k] = abs(u[k])
    return sigma, u, v


def dft_codebook(n: int) -> np.ndarray:
    """n x n matrix whose column k is exp(-j 2 pi m k / n) / sqrt(n), m = 0..n-1."""
    if n < 1:
        raise DimensionError(f"dft_codebook needs n >= 1, got {n}")
    m = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)
