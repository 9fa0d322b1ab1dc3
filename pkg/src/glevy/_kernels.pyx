# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backward sweep.  Same arithmetic order as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def backward_sweep(u_T, Py_ssize_t nt, double dt, double dx, half_a, jidx, jw0, jw1, W, bint store):
    cdef const double[:, ::1] u0 = np.ascontiguousarray(u_T, dtype=np.float64)
    cdef Py_ssize_t B = u0.shape[0], nx = u0.shape[1]
    cdef const double[::1] ha = np.ascontiguousarray(half_a, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] ji = np.ascontiguousarray(jidx, dtype=np.int64)
    cdef const double[:, ::1] w0 = np.ascontiguousarray(jw0, dtype=np.float64)
    cdef const double[:, ::1] w1 = np.ascontiguousarray(jw1, dtype=np.float64)
    cdef const double[:, ::1] Wm = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t nq = ha.shape[0], nv = Wm.shape[0], m = Wm.shape[1]

    buf_arr = np.empty((2, B, nx))
    buf_arr[0] = np.asarray(u0)
    cdef double[:, :, ::1] buf = buf_arr
    cdef double[:, :, ::1] out
    out_arr = None
    if store:
        out_arr = np.empty((nt + 1, B, nx))
        out_arr[nt] = np.asarray(u0)
        out = out_arr

    cdef double inv = 1.0 / (dx * dx)
    cdef double c, l, r, lap, gc, g, gd, s, uj
    cdef Py_ssize_t k, b, i, q, v, j, i0
    cdef int p = 0

    with nogil:
        for k in range(nt - 1, -1, -1):
            for b in range(B):
                for i in range(nx):
                    c = buf[p, b, i]
                    l = buf[p, b, i - 1] if i > 0 else c
                    r = buf[p, b, i + 1] if i < nx - 1 else c
                    lap = (l - 2.0 * c + r) * inv
                    gc = ha[0] * lap
                    for q in range(1, nq):
                        g = ha[q] * lap
                        if g > gc:
                            gc = g
                    gd = 0.0
                    for v in range(nv):
                        s = 0.0
                        for j in range(m):
                            i0 = ji[j, i]
                            uj = buf[p, b, i0] * w0[j, i] + buf[p, b, i0 + 1] * w1[j, i] - c
                            s = s + Wm[v, j] * uj
                        if v == 0 or s > gd:
                            gd = s
                    buf[1 - p, b, i] = c + dt * (gc + gd)
            p = 1 - p
            if store:
                for b in range(B):
                    for i in range(nx):
                        out[k, b, i] = buf[p, b, i]
    if store:
        return out_arr
    return np.array(buf_arr[p], copy=True)
