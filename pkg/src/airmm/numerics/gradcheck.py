from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor

# |a - n| is measured against max(|a|, |n|, floor); the floor absorbs
# central-difference roundoff on coordinates whose true gradient is ~0.
_FLOOR = 1e-4


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float | None = None,
    coords=None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps ``x`` to a scalar Tensor.  ``x.data`` is perturbed in place and
    restored, so ``f`` may also be a closure over a model that owns ``x``.
    Default step per coordinate is ``1e-6 * (1 + |x_i|)``.  ``coords`` limits
    the check to a subset of flat indices.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check needs a float64 tensor")
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if not out.requires_grad:
        analytic = np.zeros_like(x.data)
    else:
        out.backward()
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    x.grad = None
    x.requires_grad = False

    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    scale = max(1.0, abs(float(out.data)))
    worst = 0.0
    try:
        for i in idx:
            orig = flat[i]
            step = h if h is not None else 1e-6 * (1.0 + abs(orig))
            flat[i] = orig + step
            fp = float(f(x).data)
            flat[i] = orig - step
            fm = float(f(x).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), _FLOOR * scale)
            worst = max(worst, err)
    finally:
        x.requires_grad = was
    return worst
