# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 stepping kernel for the affine system dx/dt = A x + b.

Contract mirrors gridfreq._rk4_py.rk4_segment; see that module for the
reference semantics. The closed-loop dynamics are linear between events,
so the whole inner loop is dense matrix-vector work.
"""
import numpy as np


def rk4_segment(double[:, ::1] A, double[::1] b, double[::1] x, double h,
                long n_steps, long first_record, long stride,
                double[:, ::1] out):
    cdef long dim = A.shape[0]
    cdef long n_rec = 0
    cdef long next_rec = first_record if first_record > 0 else n_steps + 1
    cdef long step, i, j
    cdef double h2 = 0.5 * h
    cdef double h6 = h / 6.0
    cdef double acc

    scratch = np.empty((5, dim))
    cdef double[:, ::1] s = scratch
    # rows: 0 = k1, 1 = k2, 2 = k3, 3 = k4, 4 = stage state

    for step in range(1, n_steps + 1):
        for i in range(dim):
            acc = b[i]
            for j in range(dim):
                acc += A[i, j] * x[j]
            s[0, i] = acc
        for i in range(dim):
            s[4, i] = x[i] + h2 * s[0, i]
        for i in range(dim):
            acc = b[i]
            for j in range(dim):
                acc += A[i, j] * s[4, j]
            s[1, i] = acc
        for i in range(dim):
            s[4, i] = x[i] + h2 * s[1, i]
        for i in range(dim):
            acc = b[i]
            for j in range(dim):
                acc += A[i, j] * s[4, j]
            s[2, i] = acc
        for i in range(dim):
            s[4, i] = x[i] + h * s[2, i]
        for i in range(dim):
            acc = b[i]
            for j in range(dim):
                acc += A[i, j] * s[4, j]
            s[3, i] = acc
        for i in range(dim):
            x[i] = x[i] + h6 * (s[0, i] + 2.0 * (s[1, i] + s[2, i]) + s[3, i])
        if step == next_rec:
            if n_rec < out.shape[0]:
                for i in range(dim):
                    out[n_rec, i] = x[i]
                n_rec += 1
            next_rec += stride
    return n_rec
