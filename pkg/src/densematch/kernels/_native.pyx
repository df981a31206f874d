# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused single-pass attention kernels.

Same contracts as kernels._reference; single-threaded, float32 throughout.
The vanilla kernel keeps an O(M) score buffer per query row instead of the
full N x M matrix; the linear kernel fuses the feature map into the
contractions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport expf

cnp.import_array()


cdef inline float _phi(float x) nogil:
    # elu(x) + 1
    return x + 1.0 if x >= 0.0 else expf(x)


def vanilla_attention(float[:, ::1] q, float[:, ::1] k, float[:, ::1] v):
    cdef Py_ssize_t n = q.shape[0], m = k.shape[0], d = q.shape[1]
    if k.shape[1] != d or v.shape[0] != m:
        raise ValueError("attention operand extents disagree")
    out_arr = np.zeros((n, v.shape[1]), dtype=np.float32)
    score_arr = np.empty(m, dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float[::1] score = score_arr
    cdef Py_ssize_t dv = v.shape[1]
    cdef Py_ssize_t i, j, c
    cdef float s, mx, z, p
    with nogil:
        for i in range(n):
            mx = -3.4e38
            for j in range(m):
                s = 0.0
                for c in range(d):
                    s += q[i, c] * k[j, c]
                score[j] = s
                if s > mx:
                    mx = s
            z = 0.0
            for j in range(m):
                p = expf(score[j] - mx)
                score[j] = p
                z += p
            for j in range(m):
                p = score[j] / z
                for c in range(dv):
                    out[i, c] += p * v[j, c]
    return out_arr


def linear_attention(float[:, ::1] q, float[:, ::1] k, float[:, ::1] v):
    cdef Py_ssize_t n = q.shape[0], m = k.shape[0], d = q.shape[1]
    if k.shape[1] != d or v.shape[0] != m:
        raise ValueError("attention operand extents disagree")
    cdef Py_ssize_t dv = v.shape[1]
    out_arr = np.empty((n, dv), dtype=np.float32)
    kv_arr = np.zeros((d, dv), dtype=np.float32)
    ksum_arr = np.zeros(d, dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float[:, ::1] kv = kv_arr
    cdef float[::1] ksum = ksum_arr
    cdef Py_ssize_t i, j, c
    cdef float f, num, den
    with nogil:
        for j in range(m):
            for c in range(d):
                f = _phi(k[j, c])
                ksum[c] += f
                for i in range(dv):
                    kv[c, i] += f * v[j, i]
        for i in range(n):
            den = 0.0
            for c in range(d):
                den += _phi(q[i, c]) * ksum[c]
            for j in range(dv):
                num = 0.0
                for c in range(d):
                    num += _phi(q[i, c]) * kv[c, j]
                out[i, j] = num / den
    return out_arr
