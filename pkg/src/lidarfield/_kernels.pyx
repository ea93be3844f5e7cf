# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops: ray-sample compositing and voxel-grid traversal.

Mirrors the numpy fallbacks in lidarfield.kernels operation for operation so
both backends produce matching floats.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, fabs, floor

cnp.import_array()


def alpha_composite(double[:, ::1] sigma, double[:, ::1] delta):
    cdef Py_ssize_t b, i, nb = sigma.shape[0], n = sigma.shape[1]
    w_arr = np.empty((nb, n), dtype=np.float64)
    t_arr = np.empty((nb, n), dtype=np.float64)
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] t_incl = t_arr
    cdef double cum, optical
    for b in range(nb):
        cum = 0.0
        for i in range(n):
            optical = sigma[b, i] * delta[b, i]
            cum += optical
            w[b, i] = -expm1(-optical) * exp(-(cum - optical))
            t_incl[b, i] = exp(-cum)
    return w_arr, t_arr


def composite_backward(double[:, ::1] g, double[:, ::1] w,
                       double[:, ::1] t_incl, double[:, ::1] delta):
    cdef Py_ssize_t b, i, nb = g.shape[0], n = g.shape[1]
    out_arr = np.empty((nb, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double suffix
    for b in range(nb):
        suffix = 0.0
        for i in range(n - 1, -1, -1):
            out[b, i] = delta[b, i] * (g[b, i] * t_incl[b, i] - suffix)
            suffix += g[b, i] * w[b, i]
    return out_arr


def cast_rays(double[:, ::1] origins, double[:, ::1] dirs, double t_max,
              double voxel, double[::1] grid_origin, long[::1] dims,
              long[::1] cells_sorted):
    cdef Py_ssize_t r, n_rays = origins.shape[0]
    out_arr = np.full(n_rays, -1.0, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef long n_cells = cells_sorted.shape[0]
    cdef double gmin[3]
    cdef double gmax[3]
    cdef long nd[3]
    cdef long strides[3]
    cdef int a, axis
    for a in range(3):
        gmin[a] = grid_origin[a]
        nd[a] = dims[a]
        gmax[a] = gmin[a] + nd[a] * voxel
    strides[0] = nd[1] * nd[2]
    strides[1] = nd[2]
    strides[2] = 1

    cdef double o[3]
    cdef double d[3]
    cdef double t_delta[3]
    cdef double t_next[3]
    cdef long cell[3]
    cdef long step[3]
    cdef double t_enter, t_exit, lo, hi, t1, t2, t_entry, t_step
    cdef double inf = float("inf")
    cdef long lin, jlo, jhi, jmid

    for r in range(n_rays):
        for a in range(3):
            o[a] = origins[r, a]
            d[a] = dirs[r, a]
        t_enter = 0.0
        t_exit = t_max
        for a in range(3):
            if d[a] != 0.0:
                t1 = (gmin[a] - o[a]) / d[a]
                t2 = (gmax[a] - o[a]) / d[a]
                lo = t1 if t1 < t2 else t2
                hi = t2 if t1 < t2 else t1
            else:
                if gmin[a] <= o[a] <= gmax[a]:
                    lo, hi = -inf, inf
                else:
                    lo, hi = inf, -inf
            if lo > t_enter:
                t_enter = lo
            if hi < t_exit:
                t_exit = hi
        if t_enter > t_exit:
            continue

        for a in range(3):
            cell[a] = <long>floor((o[a] + t_enter * d[a] - gmin[a]) / voxel)
            if cell[a] < 0:
                cell[a] = 0
            if cell[a] >= nd[a]:
                cell[a] = nd[a] - 1
            if d[a] > 0.0:
                step[a] = 1
                t_delta[a] = voxel / d[a]
                t_next[a] = (gmin[a] + (cell[a] + 1) * voxel - o[a]) / d[a]
            elif d[a] < 0.0:
                step[a] = -1
                t_delta[a] = -voxel / d[a]
                t_next[a] = (gmin[a] + cell[a] * voxel - o[a]) / d[a]
            else:
                step[a] = 0
                t_delta[a] = inf
                t_next[a] = inf

        t_entry = t_enter
        while True:
            lin = cell[0] * strides[0] + cell[1] * strides[1] + cell[2]
            jlo = 0
            jhi = n_cells
            while jlo < jhi:
                jmid = (jlo + jhi) >> 1
                if cells_sorted[jmid] < lin:
                    jlo = jmid + 1
                else:
                    jhi = jmid
            if jlo < n_cells and cells_sorted[jlo] == lin:
                out[r] = t_entry
                break
            axis = 0
            if t_next[1] < t_next[axis]:
                axis = 1
            if t_next[2] < t_next[axis]:
                axis = 2
            t_step = t_next[axis]
            if t_step > t_exit:
                break
            t_entry = t_step
            cell[axis] += step[axis]
            if cell[axis] < 0 or cell[axis] >= nd[axis]:
                break
            t_next[axis] += t_delta[axis]
    return out_arr
