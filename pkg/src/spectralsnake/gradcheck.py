"""Central-difference gradient checking.

The probe evaluates the function in float64 (the production dtype stays
float32) so the finite-difference quotient is not drowned by rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tol: float
    worst_index: tuple = ()
    entries: int = 0
    analytic: np.ndarray = field(default=None, repr=False)
    numeric: np.ndarray = field(default=None, repr=False)

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return (
            f"grad_check: {status} max_rel_error={self.max_rel_error:.3e} "
            f"tol={self.tol:.1e} entries={self.entries} worst={self.worst_index}"
        )


def grad_check(f, x, h=1e-3, tol=1e-3):
    """Compare the analytic gradient of scalar-valued f at x with central
    differences (f(x+h) - f(x-h)) / 2h, entry by entry.

    x may be a Tensor or ndarray; evaluation happens in float64.
    """
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True, dtype=np.float64)
    y = f(xt)
    y.backward()
    analytic = xt.grad.copy()

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x0.copy(), dtype=np.float64)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(x0.copy(), dtype=np.float64)).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * scale)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    max_rel = float(rel.max(initial=0.0))
    return GradCheckReport(
        max_rel_error=max_rel,
        passed=max_rel < tol,
        tol=tol,
        worst_index=worst,
        entries=int(flat.size),
        analytic=analytic,
        numeric=numeric,
    )
