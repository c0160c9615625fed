# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels for strided 3D cross-correlation.

Column layout is ``(N, C*kt*kh*kw, To*Ho*Wo)`` with the kernel offset
varying fastest in the order (c, a, b, d). ``col2im3d`` accumulates
contributions in the same (a, b, d) order as the numpy fallback, so the
two backends agree bit-for-bit.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col3d(const double[:, :, :, :, ::1] xp,
             int kt, int kh, int kw, int st, int sh, int sw,
             int To, int Ho, int Wo):
    cdef Py_ssize_t N = xp.shape[0]
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t K = kt * kh * kw
    cdef Py_ssize_t P = To * Ho * Wo
    out = np.empty((N, C * K, P), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t n, c, a, b, d, t, h, w, row, col
    with nogil:
        for n in range(N):
            for c in range(C):
                for a in range(kt):
                    for b in range(kh):
                        for d in range(kw):
                            row = ((c * kt + a) * kh + b) * kw + d
                            col = 0
                            for t in range(To):
                                for h in range(Ho):
                                    for w in range(Wo):
                                        cols[n, row, col] = xp[n, c, t * st + a, h * sh + b, w * sw + d]
                                        col = col + 1
    return out


def col2im3d(const double[:, :, ::1] cols, tuple padded_shape,
             int kt, int kh, int kw, int st, int sh, int sw,
             int To, int Ho, int Wo):
    cdef Py_ssize_t N = padded_shape[0]
    cdef Py_ssize_t C = padded_shape[1]
    out = np.zeros(padded_shape, dtype=np.float64)
    cdef double[:, :, :, :, ::1] gx = out
    cdef Py_ssize_t n, c, a, b, d, t, h, w, row, col
    with nogil:
        for n in range(N):
            for c in range(C):
                for a in range(kt):
                    for b in range(kh):
                        for d in range(kw):
                            row = ((c * kt + a) * kh + b) * kw + d
                            col = 0
                            for t in range(To):
                                for h in range(Ho):
                                    for w in range(Wo):
                                        gx[n, c, t * st + a, h * sh + b, w * sw + d] += cols[n, row, col]
                                        col = col + 1
    return out
