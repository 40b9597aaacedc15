"""NumPy fallback for the RK4 stepping kernel.

Same contract as the compiled extension gridfreq._rk4: advance the affine
system dx/dt = A x + b by n_steps classical Runge-Kutta steps of size h,
recording the state after local step s (1-based) whenever
s == first_record + k * stride. first_record <= 0 disables recording.
Returns the number of rows written to out. x is updated in place.
"""
from __future__ import annotations

import numpy as np


def rk4_segment(A: np.ndarray, b: np.ndarray, x: np.ndarray, h: float,
                n_steps: int, first_record: int, stride: int,
                out: np.ndarray) -> int:
    n_rec = 0
    next_rec = first_record if first_record > 0 else n_steps + 1
    h2 = 0.5 * h
    h6 = h / 6.0
    for step in range(1, n_steps + 1):
        k1 = A @ x + b
        k2 = A @ (x + h2 * k1) + b
        k3 = A @ (x + h2 * k2) + b
        k4 = A @ (x + h * k3) + b
        x += h6 * (k1 + 2.0 * (k2 + k3) + k4)
        if step == next_rec:
            if n_rec < out.shape[0]:
                out[n_rec] = x
                n_rec += 1
            next_rec += stride
    return n_rec
