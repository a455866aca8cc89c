# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
from libc.math cimport exp, tanh


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def pool_forward(const double[:, :, ::1] features, const long long[::1] e1,
                 const long long[::1] e2, const long long[::1] lengths):
    cdef Py_ssize_t B = features.shape[0], F = features.shape[2]
    pooled_np = np.zeros((B, 3, F))
    arg_np = np.full((B, 3, F), -1, dtype=np.int64)
    cdef double[:, :, ::1] pooled = pooled_np
    cdef long long[:, :, ::1] arg = arg_np
    cdef Py_ssize_t b, s, i, f, lo, hi
    cdef long long bounds[4]
    with nogil:
        for b in range(B):
            bounds[0] = 0
            bounds[1] = e1[b] + 1
            bounds[2] = e2[b] + 1
            bounds[3] = lengths[b]
            for s in range(3):
                lo = bounds[s]
                hi = bounds[s + 1]
                if lo >= hi:
                    continue
                for f in range(F):
                    pooled[b, s, f] = features[b, lo, f]
                    arg[b, s, f] = lo
                for i in range(lo + 1, hi):
                    for f in range(F):
                        if features[b, i, f] > pooled[b, s, f]:
                            pooled[b, s, f] = features[b, i, f]
                            arg[b, s, f] = i
    return pooled_np, arg_np


def pool_backward(const double[:, :, ::1] dpooled, const long long[:, :, ::1] argmax, Py_ssize_t seq_len):
    cdef Py_ssize_t B = dpooled.shape[0], S = dpooled.shape[1], F = dpooled.shape[2]
    dfeat_np = np.zeros((B, seq_len, F))
    cdef double[:, :, ::1] dfeat = dfeat_np
    cdef Py_ssize_t b, s, f
    cdef long long a
    with nogil:
        for b in range(B):
            for s in range(S):
                for f in range(F):
                    a = argmax[b, s, f]
                    if a >= 0:
                        dfeat[b, a, f] += dpooled[b, s, f]
    return dfeat_np


def lstm_pointwise(const double[:, ::1] gates, const double[:, ::1] c):
    cdef Py_ssize_t B = c.shape[0], H = c.shape[1]
    h2_np = np.empty((B, H))
    c2_np = np.empty((B, H))
    acts_np = np.empty((B, 4 * H))
    tc2_np = np.empty((B, H))
    cdef double[:, ::1] h2 = h2_np, c2 = c2_np, acts = acts_np, tc2 = tc2_np
    cdef Py_ssize_t b, j
    cdef double i_, f_, o_, g_, cc
    with nogil:
        for b in range(B):
            for j in range(H):
                i_ = _sigmoid(gates[b, j])
                f_ = _sigmoid(gates[b, H + j])
                o_ = _sigmoid(gates[b, 2 * H + j])
                g_ = tanh(gates[b, 3 * H + j])
                acts[b, j] = i_
                acts[b, H + j] = f_
                acts[b, 2 * H + j] = o_
                acts[b, 3 * H + j] = g_
                cc = f_ * c[b, j] + i_ * g_
                c2[b, j] = cc
                tc2[b, j] = tanh(cc)
                h2[b, j] = o_ * tc2[b, j]
    return h2_np, c2_np, acts_np, tc2_np


def lstm_pointwise_backward(const double[:, ::1] dh2, const double[:, ::1] dc2, const double[:, ::1] c,
                            const double[:, ::1] acts, const double[:, ::1] tc2):
    cdef Py_ssize_t B = c.shape[0], H = c.shape[1]
    dgates_np = np.empty((B, 4 * H))
    dc_np = np.empty((B, H))
    cdef double[:, ::1] dgates = dgates_np, dc = dc_np
    cdef Py_ssize_t b, j
    cdef double i_, f_, o_, g_, t, dct
    with nogil:
        for b in range(B):
            for j in range(H):
                i_ = acts[b, j]
                f_ = acts[b, H + j]
                o_ = acts[b, 2 * H + j]
                g_ = acts[b, 3 * H + j]
                t = tc2[b, j]
                dct = dc2[b, j] + dh2[b, j] * o_ * (1.0 - t * t)
                dgates[b, j] = dct * g_ * i_ * (1.0 - i_)
                dgates[b, H + j] = dct * c[b, j] * f_ * (1.0 - f_)
                dgates[b, 2 * H + j] = dh2[b, j] * t * o_ * (1.0 - o_)
                dgates[b, 3 * H + j] = dct * i_ * (1.0 - g_ * g_)
                dc[b, j] = dct * f_
    return dgates_np, dc_np


def sample_categorical(const double[:, ::1] probs, const double[::1] u):
    cdef Py_ssize_t B = probs.shape[0], V = probs.shape[1]
    ids_np = np.empty(B, dtype=np.int64)
    cdef long long[::1] ids = ids_np
    cdef Py_ssize_t b, k, last
    cdef double total, acc, target
    with nogil:
        for b in range(B):
            total = 0.0
            last = 0
            for k in range(V):
                total += probs[b, k]
                if probs[b, k] > 0:
                    last = k
            target = u[b] * total
            acc = 0.0
            ids[b] = last
            for k in range(V):
                acc += probs[b, k]
                if acc > target:
                    ids[b] = k
                    break
    return ids_np
