# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled cell-batched accumulation kernel for element matrix assembly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pairwise_accumulate(double[:, :, ::1] A, double[:, :, ::1] B):
    """out[c,i,j] = sum_q A[c,q,i] * B[c,q,j] for every cell c."""
    cdef Py_ssize_t C = A.shape[0]
    cdef Py_ssize_t Q = A.shape[1]
    cdef Py_ssize_t I = A.shape[2]
    cdef Py_ssize_t J = B.shape[2]
    cdef cnp.ndarray[double, ndim=3] out = np.zeros((C, I, J))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t c, q, i, j
    cdef double a
    for c in range(C):
        for q in range(Q):
            for i in range(I):
                a = A[c, q, i]
                if a != 0.0:
                    for j in range(J):
                        o[c, i, j] += a * B[c, q, j]
    return out
