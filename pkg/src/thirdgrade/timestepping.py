"""Integrating-factor Runge-Kutta stepping shared by the forward, linearized and adjoint solvers."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["NonFiniteError", "lawson_rk4", "midpoint_series", "with_midpoints"]


class NonFiniteError(FloatingPointError):
    """Raised when a solve produces NaN or Inf; ``step`` is the first bad step index."""

    def __init__(self, step: int, what: str = "state"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step
        self.what = what


def lawson_rk4(decay: np.ndarray, rhs: Callable[[int, np.ndarray], np.ndarray],
               y0: np.ndarray, steps: int, dt: float, what: str = "state",
               failed: np.ndarray | None = None) -> np.ndarray:
    """Integrate ``y' = -decay * y + rhs(j, y)`` with classical RK4 in Lawson form.

    ``rhs`` receives the half-step index ``j`` (stage time ``j * dt / 2``) so
    callers can feed forcing sampled on the half-step lattice.  Returns the
    dense trajectory with ``steps + 1`` snapshots.

    When ``failed`` is given (a boolean array over the leading batch axes of
    ``y0``), samples that go non-finite are flagged there and frozen at zero
    instead of aborting the whole batch.
    """
    if failed is not None:
        return _lawson_partial(decay, rhs, y0, steps, dt, what, failed)
    E = np.exp(-decay * dt)
    Eh = np.exp(-decay * dt / 2)
    out = np.empty((steps + 1,) + y0.shape, dtype=y0.dtype)
    out[0] = y0
    y = y0
    # overflow is detected explicitly below, so silence the floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(steps):
            j = 2 * n
            k1 = rhs(j, y)
            yh = Eh * y
            k2 = rhs(j + 1, yh + 0.5 * dt * Eh * k1)
            k3 = rhs(j + 1, yh + 0.5 * dt * k2)
            k4 = rhs(j + 2, E * y + dt * Eh * k3)
            y = E * y + (dt / 6) * (E * k1 + 2 * Eh * (k2 + k3) + k4)
            if not np.isfinite(y).all():
                raise NonFiniteError(n + 1, what)
            out[n + 1] = y
    return out


def midpoint_series(y: np.ndarray) -> np.ndarray:
    """Cubic-interpolated values halfway between consecutive snapshots along axis 0."""
    n = y.shape[0] - 1
    if n < 1:
        return y[:0]
    if n < 3:
        return 0.5 * (y[:-1] + y[1:])
    mid = np.empty((n,) + y.shape[1:], dtype=y.dtype)
    mid[1:-1] = (-y[:-3] + 9 * y[1:-2] + 9 * y[2:-1] - y[3:]) / 16
    mid[0] = (5 * y[0] + 15 * y[1] - 5 * y[2] + y[3]) / 16
    mid[-1] = (5 * y[-1] + 15 * y[-2] - 5 * y[-3] + y[-4]) / 16
    return mid


def with_midpoints(y: np.ndarray) -> np.ndarray:
    """Interleave snapshots and midpoints into a half-step series of length ``2n + 1``."""
    n = y.shape[0] - 1
    out = np.empty((2 * n + 1,) + y.shape[1:], dtype=y.dtype)
    out[0::2] = y
    out[1::2] = midpoint_series(y)
    return out


def _lawson_partial(decay, rhs, y0, steps, dt, what, failed):
    E = np.exp(-decay * dt)
    Eh = np.exp(-decay * dt / 2)
    red = tuple(range(failed.ndim, y0.ndim))
    out = np.empty((steps + 1,) + y0.shape, dtype=y0.dtype)
    out[0] = y0
    y = y0
    with np.errstate(all="ignore"):
        for n in range(steps):
            j = 2 * n
            k1 = rhs(j, y)
            yh = Eh * y
            k2 = rhs(j + 1, yh + 0.5 * dt * Eh * k1)
            k3 = rhs(j + 1, yh + 0.5 * dt * k2)
            k4 = rhs(j + 2, E * y + dt * Eh * k3)
            y = E * y + (dt / 6) * (E * k1 + 2 * Eh * (k2 + k3) + k4)
            bad = ~np.isfinite(y).all(axis=red)
            if bad.any():
                failed |= bad
                if failed.all():
                    raise NonFiniteError(n + 1, what)
                y = np.where(failed.reshape(failed.shape + (1,) * len(red)), 0, y)
            out[n + 1] = y
    return out
