"""Independent reference routines used only by the tests."""

import numpy as np


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _proper_cross(p, q, a, b):
    d1, d2 = _orient(a, b, p), _orient(a, b, q)
    d3, d4 = _orient(p, q, a), _orient(p, q, b)
    return d1 * d2 < 0 and d3 * d4 < 0


def segment_hits_rect_edges(p, q, rect):
    """Edge-by-edge test: an endpoint strictly inside, or a proper crossing of one of the four walls."""
    x0, y0, x1, y1 = rect
    for pt in (p, q):
        if x0 < pt[0] < x1 and y0 < pt[1] < y1:
            return True
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    return any(_proper_cross(p, q, corners[i], corners[(i + 1) % 4]) for i in range(4))


def brute_force_beam(csi):
    n_t, n_c = csi.shape
    best, best_gain = 0, -1.0
    for k in range(n_t):
        c = np.array([np.exp(-2j * np.pi * m * k / n_t) for m in range(n_t)]) / np.sqrt(n_t)
        gain = 0.0
        for f in range(n_c):
            acc = 0j
            for m in range(n_t):
                acc += np.conj(c[m]) * csi[m, f]
            gain += abs(acc) ** 2
        if gain > best_gain:
            best, best_gain = k, gain
    return best


def power_iteration_left(h, steps=20000, tol=1e-15, seed=0):
    """Principal left singular vector by plain power iteration on h h^H from a random start."""
    rng = np.random.default_rng(seed)
    m = h @ h.conj().T
    x = rng.normal(size=h.shape[0]) + 1j * rng.normal(size=h.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(steps):
        y = m @ x
        y /= np.linalg.norm(y)
        # compare up to phase
        if 1 - abs(np.vdot(x, y)) < tol:
            x = y
            break
        x = y
    return x


def sgcs(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


def fspl_db(distance, f, c=299792458.0):
    return 20 * np.log10(4 * np.pi * f * distance / c)
