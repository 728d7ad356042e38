# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment reductions over edge arrays.

Both routines accumulate edges in input order so results match the numpy
fallback bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def segment_sum(const long long[:] groups, values, Py_ssize_t n_groups):
    arr = np.ascontiguousarray(values, dtype=np.float64)
    cdef bint flat = arr.ndim == 1
    cdef Py_ssize_t width = int(np.prod(arr.shape[1:]))
    cdef double[:, :] vals = arr.reshape(arr.shape[0], width)
    cdef Py_ssize_t n_edges = vals.shape[0]
    cdef Py_ssize_t k = vals.shape[1]
    cdef cnp.ndarray out_arr = np.zeros((n_groups, k), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t e, c
    cdef long long g
    if groups.shape[0] != n_edges:
        raise ValueError("groups and values disagree on the number of edges")
    for e in range(n_edges):
        g = groups[e]
        if g < 0 or g >= n_groups:
            raise IndexError(f"group index {g} out of range [0, {n_groups})")
        for c in range(k):
            out[g, c] += vals[e, c]
    if flat:
        return out_arr.reshape(n_groups)
    return out_arr.reshape((n_groups,) + arr.shape[1:])


def segment_gram(const long long[:] groups, const double[:, :] x,
                 const double[:] w, const double[:] y, Py_ssize_t n_groups):
    cdef Py_ssize_t n_edges = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef cnp.ndarray a_arr = np.zeros((n_groups, d, d), dtype=np.float64)
    cdef cnp.ndarray b_arr = np.zeros((n_groups, d), dtype=np.float64)
    cdef double[:, :, :] A = a_arr
    cdef double[:, :] B = b_arr
    cdef Py_ssize_t e, r, c
    cdef long long g
    cdef double wx, wy
    if groups.shape[0] != n_edges or w.shape[0] != n_edges or y.shape[0] != n_edges:
        raise ValueError("edge arrays have inconsistent lengths")
    for e in range(n_edges):
        g = groups[e]
        if g < 0 or g >= n_groups:
            raise IndexError(f"group index {g} out of range [0, {n_groups})")
        wy = w[e] * y[e]
        for r in range(d):
            wx = w[e] * x[e, r]
            B[g, r] += wy * x[e, r]
            for c in range(r, d):
                A[g, r, c] += wx * x[e, c]
    for g in range(n_groups):
        for r in range(d):
            for c in range(r + 1, d):
                A[g, c, r] = A[g, r, c]
    return a_arr, b_arr
