# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def matvec_i8(const signed char[:, ::1] w, const signed char[::1] v):
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1], r, c
    cdef int acc
    if v.shape[0] != cols:
        raise ValueError(f"inner dimensions differ: {cols} vs {v.shape[0]}")
    out = np.empty(rows, dtype=np.int32)
    cdef int[::1] o = out
    with nogil:
        for r in range(rows):
            acc = 0
            for c in range(cols):
                acc = acc + <int>w[r, c] * <int>v[c]
            o[r] = acc
    return out


def sum_ltr(const double[::1] x):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(x.shape[0]):
        acc = acc + x[i]
    return acc


def attend_head(const double[:, ::1] k, const double[:, ::1] v,
                const double[::1] q, double scale, Py_ssize_t t, Py_ssize_t valid):
    """Single-head attention of ``q`` over the first ``t`` cache rows.

    Rows at index >= ``valid`` receive the additive -1e30 mask.
    """
    cdef Py_ssize_t d = q.shape[0], j, i
    cdef double acc, m, total
    if t < 1:
        raise ValueError("empty cache")
    scores = np.empty(t, dtype=np.float64)
    out = np.zeros(d, dtype=np.float64)
    cdef double[::1] s = scores
    cdef double[::1] o = out
    for j in range(t):
        acc = 0.0
        for i in range(d):
            acc = acc + k[j, i] * q[i]
        s[j] = acc * scale
        if j >= valid:
            s[j] = s[j] + (-1e30)
    m = s[0]
    for j in range(1, t):
        if s[j] > m:
            m = s[j]
    # numpy's exp, not libm's: the two differ in the last ulp and the
    # fallback backend must produce identical bits
    scores = np.exp(scores - m)
    s = scores
    total = 0.0
    for j in range(t):
        total = total + s[j]
    for j in range(t):
        s[j] = s[j] / total
    for j in range(t):
        for i in range(d):
            o[i] = o[i] + s[j] * v[j, i]
    return out
