# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Contracts mirror ``dynorm.kernels._reference``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double ZERO_NORM = 1e-12


def group_stats(const float[:, :, :, ::1] x, const cnp.intp_t[::1] labels, Py_ssize_t k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, h, w, g
    cdef double acc, d
    mean_arr = np.zeros((k, C), dtype=np.float64)
    std_arr = np.zeros((k, C), dtype=np.float64)
    count_arr = np.zeros(k, dtype=np.float64)
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] std = std_arr
    cdef double[::1] count = count_arr
    for b in range(B):
        count[labels[b]] += H * W
    for b in range(B):
        g = labels[b]
        for c in range(C):
            acc = 0.0
            for h in range(H):
                for w in range(W):
                    acc += x[b, c, h, w]
            mean[g, c] += acc
    for g in range(k):
        if count[g] > 0:
            for c in range(C):
                mean[g, c] /= count[g]
    for b in range(B):
        g = labels[b]
        for c in range(C):
            acc = 0.0
            for h in range(H):
                for w in range(W):
                    d = x[b, c, h, w] - mean[g, c]
                    acc += d * d
            std[g, c] += acc
    for g in range(k):
        if count[g] > 0:
            for c in range(C):
                std[g, c] = sqrt(std[g, c] / count[g])
    return mean_arr, std_arr


def instance_means(const float[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, h, w
    cdef double acc
    out_arr = np.empty((B, C), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for b in range(B):
        for c in range(C):
            acc = 0.0
            for h in range(H):
                for w in range(W):
                    acc += x[b, c, h, w]
            out[b, c] = acc / (H * W)
    return out_arr


def cosine_matrix(mu_in):
    cdef const double[:, ::1] mu = np.ascontiguousarray(mu_in, dtype=np.float64)
    cdef Py_ssize_t B = mu.shape[0], C = mu.shape[1], i, j, c
    cdef double dot
    norms_arr = np.empty(B, dtype=np.float64)
    sim_arr = np.zeros((B, B), dtype=np.float64)
    cdef double[::1] norms = norms_arr
    cdef double[:, ::1] sim = sim_arr
    for i in range(B):
        dot = 0.0
        for c in range(C):
            dot += mu[i, c] * mu[i, c]
        norms[i] = sqrt(dot)
    for i in range(B):
        for j in range(B):
            if norms[i] < ZERO_NORM or norms[j] < ZERO_NORM:
                sim[i, j] = 0.0
                continue
            dot = 0.0
            for c in range(C):
                dot += mu[i, c] * mu[j, c]
            sim[i, j] = dot / (norms[i] * norms[j])
    return sim_arr


def first_neighbors(mu_in):
    cdef double[:, ::1] sim = cosine_matrix(mu_in)
    cdef Py_ssize_t B = sim.shape[0], i, j, best
    cdef double best_val
    out_arr = np.empty(B, dtype=np.intp)
    cdef cnp.intp_t[::1] out = out_arr
    for i in range(B):
        best = -1
        best_val = -INFINITY
        for j in range(B):
            if j == i:
                continue
            # strict > keeps the lowest index on ties
            if best < 0 or sim[i, j] > best_val:
                best = j
                best_val = sim[i, j]
        out[i] = best
    return out_arr


cdef Py_ssize_t _find(cnp.intp_t[::1] parent, Py_ssize_t a) noexcept:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def components(adj_in):
    cdef const cnp.uint8_t[:, ::1] adj = np.ascontiguousarray(adj_in, dtype=np.uint8)
    cdef Py_ssize_t B = adj.shape[0], i, j, ri, rj, k = 0
    parent_arr = np.arange(B, dtype=np.intp)
    cdef cnp.intp_t[::1] parent = parent_arr
    for i in range(B):
        for j in range(i + 1, B):
            if adj[i, j]:
                ri = _find(parent, i)
                rj = _find(parent, j)
                if ri < rj:
                    parent[rj] = ri
                elif rj < ri:
                    parent[ri] = rj
    labels_arr = np.empty(B, dtype=np.intp)
    remap_arr = np.full(B, -1, dtype=np.intp)
    cdef cnp.intp_t[::1] labels = labels_arr
    cdef cnp.intp_t[::1] remap = remap_arr
    for i in range(B):
        ri = _find(parent, i)
        if remap[ri] < 0:
            remap[ri] = k
            k += 1
        labels[i] = remap[ri]
    return labels_arr, int(k)


def group_normalize(const float[:, :, :, ::1] x, const cnp.intp_t[::1] labels,
                    mean_in, std_in, gamma_in, beta_in, double eps):
    cdef const double[:, ::1] mean = np.ascontiguousarray(mean_in, dtype=np.float64)
    cdef const double[:, ::1] std = np.ascontiguousarray(std_in, dtype=np.float64)
    cdef const double[::1] gamma = np.ascontiguousarray(gamma_in, dtype=np.float64)
    cdef const double[::1] beta = np.ascontiguousarray(beta_in, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, h, w, g
    cdef double m, s, ga, be
    out_arr = np.empty((B, C, H, W), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    for b in range(B):
        g = labels[b]
        for c in range(C):
            m = mean[g, c]
            s = sqrt(std[g, c] * std[g, c] + eps)
            ga = gamma[c]
            be = beta[c]
            for h in range(H):
                for w in range(W):
                    out[b, c, h, w] = <float>(ga * (<double>x[b, c, h, w] - m) / s + be)
    return out_arr


def conv2d(const float[:, :, :, ::1] x, const float[:, :, :, ::1] weight,
           const float[::1] bias, Py_ssize_t stride, Py_ssize_t padding):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = weight.shape[0], kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * padding - kw) // stride + 1
    cdef Py_ssize_t b, o, i, j, c, di, dj, i0, i1, j0, j1
    cdef double wv
    out_arr = np.empty((B, O, Ho, Wo), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    acc_arr = np.empty((Ho, Wo), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    for b in range(B):
        for o in range(O):
            acc[:, :] = 0.0
            for c in range(C):
                for di in range(kh):
                    # output rows whose input row i*stride+di-padding lies inside [0, H)
                    i0 = _ceil_div(padding - di, stride)
                    i1 = _ceil_div(H + padding - di, stride)
                    if i0 < 0:
                        i0 = 0
                    if i1 > Ho:
                        i1 = Ho
                    for dj in range(kw):
                        j0 = _ceil_div(padding - dj, stride)
                        j1 = _ceil_div(W + padding - dj, stride)
                        if j0 < 0:
                            j0 = 0
                        if j1 > Wo:
                            j1 = Wo
                        wv = weight[o, c, di, dj]
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                acc[i, j] += <double>x[b, c, i * stride + di - padding, j * stride + dj - padding] * wv
            for i in range(Ho):
                for j in range(Wo):
                    out[b, o, i, j] = <float>(acc[i, j] + bias[o])
    return out_arr


cdef inline Py_ssize_t _ceil_div(Py_ssize_t a, Py_ssize_t b) nogil:
    # b > 0; rounds toward +inf for either sign of a
    if a >= 0:
        return (a + b - 1) // b
    return -((-a) // b)
