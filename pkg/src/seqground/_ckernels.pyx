# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels. Signatures mirror ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, NAN, sqrt

cnp.import_array()


cdef inline double _dmin(double a, double b) nogil:
    return a if a < b else b


cdef inline double _dmax(double a, double b) nogil:
    return a if a > b else b


def interval_iou(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double inter, union
    with nogil:
        for i in range(n):
            for j in range(m):
                inter = _dmin(av[i, 1], bv[j, 1]) - _dmax(av[i, 0], bv[j, 0])
                if inter < 0.0:
                    inter = 0.0
                union = (av[i, 1] - av[i, 0]) + (bv[j, 1] - bv[j, 0]) - inter
                ov[i, j] = inter / union if union > 0.0 else 0.0
    return out


def interval_giou(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double inter, union, hull, iou
    with nogil:
        for i in range(n):
            for j in range(m):
                inter = _dmin(av[i, 1], bv[j, 1]) - _dmax(av[i, 0], bv[j, 0])
                if inter < 0.0:
                    inter = 0.0
                union = (av[i, 1] - av[i, 0]) + (bv[j, 1] - bv[j, 0]) - inter
                hull = _dmax(av[i, 1], bv[j, 1]) - _dmin(av[i, 0], bv[j, 0])
                if hull <= 0.0:
                    ov[i, j] = 0.0
                    continue
                iou = inter / union if union > 0.0 else 0.0
                ov[i, j] = iou - (hull - union) / hull
    return out


def linear_assignment(cost):
    cdef double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    if n > m:
        raise ValueError("linear_assignment needs rows <= columns")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    col = np.empty(n, dtype=np.int64)
    cdef long long[::1] colv = col
    with nogil:
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(m + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                delta = INFINITY
                j1 = 0
                for j in range(1, m + 1):
                    if not used[j]:
                        cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(m + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if p[j0] == 0:
                    break
            while True:
                j1 = way[j0]
                p[j0] = p[j1]
                j0 = j1
                if j0 == 0:
                    break
        for j in range(1, m + 1):
            if p[j]:
                colv[p[j] - 1] = j - 1
    return col


def kendall_tau_b(x, y):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0], i, j
    cdef long long conc = 0, disc = 0, tx = 0, ty = 0
    cdef double dx, dy, denom
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dx = xv[i] - xv[j]
                dy = yv[i] - yv[j]
                if dx == 0.0 and dy == 0.0:
                    continue
                if dx == 0.0:
                    tx += 1
                elif dy == 0.0:
                    ty += 1
                elif (dx > 0.0) == (dy > 0.0):
                    conc += 1
                else:
                    disc += 1
    denom = sqrt(<double>(conc + disc + tx) * <double>(conc + disc + ty))
    if denom == 0.0:
        return NAN
    return (conc - disc) / denom


def mean_pairwise_intersection(spans):
    cdef double[:, ::1] s = np.ascontiguousarray(spans, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = s.shape[0], i, j
    cdef double total = 0.0, inter
    if n < 2:
        return 0.0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                inter = _dmin(s[i, 1], s[j, 1]) - _dmax(s[i, 0], s[j, 0])
                if inter > 0.0:
                    total += inter
    return total / (n * (n - 1) / 2.0)
