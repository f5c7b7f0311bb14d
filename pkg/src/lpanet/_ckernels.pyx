# cython: language_level=3
"""Compiled kernels; same contract as ``_pykernels``.

Matrix products go through BLAS ``dgemm`` (scipy's Cython bindings) with the
usual operand swap so that row-major buffers can be passed unchanged.
Row sums and the ReLU mask are plain loops in fixed order.
"""

import numpy as np

from libc.stdint cimport int64_t, uint64_t
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm


cdef inline uint64_t _rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    cdef uint64_t result = _rotl(s[0] + s[3], 23) + s[0]
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


cdef inline uint64_t _bounded(uint64_t* s, uint64_t n) noexcept nogil:
    cdef uint64_t threshold = (0 - n) % n
    cdef uint64_t r
    while True:
        r = _next(s)
        if r >= threshold:
            return r % n


def xoshiro_fill_u64(uint64_t[::1] state, uint64_t[::1] out):
    cdef Py_ssize_t k
    with nogil:
        for k in range(out.shape[0]):
            out[k] = _next(&state[0])


def xoshiro_fill_uniform(uint64_t[::1] state, double[::1] out):
    cdef Py_ssize_t k
    with nogil:
        for k in range(out.shape[0]):
            out[k] = <double>(_next(&state[0]) >> 11) * (1.0 / 9007199254740992.0)


def xoshiro_bounded(uint64_t[::1] state, n):
    return _bounded(&state[0], <uint64_t>n)


def xoshiro_shuffle(uint64_t[::1] state, int64_t[::1] idx):
    cdef Py_ssize_t i, j
    cdef int64_t tmp
    with nogil:
        for i in range(idx.shape[0] - 1, 0, -1):
            j = <Py_ssize_t>_bounded(&state[0], <uint64_t>(i + 1))
            tmp = idx[i]
            idx[i] = idx[j]
            idx[j] = tmp


cdef inline void _gemm(bint ta, bint tb, int m, int n, int k, double alpha,
                       double* a, int lda, double* b, int ldb, double beta,
                       double* c, int ldc) noexcept nogil:
    # row-major C[m, n] = alpha * op(A) @ op(B) + beta * C
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef inline void _fill_rows(double* c, double* bias, int rows, int cols) noexcept nogil:
    cdef int i
    for i in range(rows):
        memcpy(c + i * cols, bias, cols * sizeof(double))


cdef inline void _col_sums(double* out, double* a, int rows, int cols) noexcept nogil:
    cdef int i, j
    memset(out, 0, cols * sizeof(double))
    for i in range(rows):
        for j in range(cols):
            out[j] += a[i * cols + j]


def loss_grad(const double[::1] theta, int d_in, int d, int h, int d_y, int n_blocks,
              const double[:, ::1] x, const double[:, ::1] y, const double[::1] lam, double[::1] grad):
    cdef int bsz = x.shape[0]
    cdef int blk = h * d + h + d * h + d
    cdef int off0 = d * d_in + d
    cdef int off_r = off0 + n_blocks * blk
    cdef double scale = 2.0 / (bsz * d_y)
    cdef int i, j
    cdef double loss = 0.0, acc, coef

    xs_arr = np.empty((n_blocks + 1) * bsz * d)
    zs_arr = np.empty(n_blocks * bsz * h)
    as_arr = np.empty(n_blocks * bsz * h)
    res_arr = np.empty(n_blocks * bsz * d_y)
    g_arr = np.zeros(bsz * d)
    dz_arr = np.empty(bsz * h)
    dy_arr = np.empty(bsz * d_y)
    per_layer_arr = np.empty(n_blocks)
    cdef double[::1] xs = xs_arr, zs = zs_arr, acts = as_arr, res = res_arr
    cdef double[::1] g = g_arr, dz = dz_arr, dy = dy_arr, per_layer = per_layer_arr

    cdef double* th = <double*>&theta[0]
    cdef double* gr = &grad[0]
    cdef double* px = <double*>&x[0, 0]
    cdef double* py = <double*>&y[0, 0]
    cdef double* w_in
    cdef double* w_out
    cdef double* xprev
    cdef double* xcur
    cdef double* z
    cdef double* a
    cdef double* rr

    with nogil:
        # forward
        _fill_rows(&xs[0], th + d * d_in, bsz, d)
        _gemm(0, 1, bsz, d, d_in, 1.0, px, d_in, th, d_in, 1.0, &xs[0], d)
        for i in range(n_blocks):
            w_in = th + off0 + i * blk
            w_out = w_in + h * d + h
            xprev = &xs[i * bsz * d]
            xcur = &xs[(i + 1) * bsz * d]
            z = &zs[i * bsz * h]
            a = &acts[i * bsz * h]
            _fill_rows(z, w_in + h * d, bsz, h)
            _gemm(0, 1, bsz, h, d, 1.0, xprev, d, w_in, d, 1.0, z, h)
            for j in range(bsz * h):
                a[j] = z[j] if z[j] > 0.0 else 0.0
            _fill_rows(xcur, w_out + d * h, bsz, d)
            _gemm(0, 1, bsz, d, h, 1.0, a, h, w_out, h, 1.0, xcur, d)
            for j in range(bsz * d):
                xcur[j] = xprev[j] + xcur[j]

        # heads
        for i in range(n_blocks):
            rr = &res[i * bsz * d_y]
            _gemm(0, 1, bsz, d_y, d, 1.0, &xs[(i + 1) * bsz * d], d, th + off_r, d, 0.0, rr, d_y)
            acc = 0.0
            for j in range(bsz * d_y):
                rr[j] = rr[j] - py[j]
                acc = acc + rr[j] * rr[j]
            per_layer[i] = acc / (bsz * d_y)
        for i in range(n_blocks):
            if lam[i] != 0.0:
                loss = loss + lam[i] * per_layer[i]

        # backward
        memset(gr + off_r, 0, d_y * d * sizeof(double))
        for i in range(n_blocks - 1, -1, -1):
            w_in = th + off0 + i * blk
            w_out = w_in + h * d + h
            xprev = &xs[i * bsz * d]
            if lam[i] != 0.0:
                coef = lam[i] * scale
                rr = &res[i * bsz * d_y]
                for j in range(bsz * d_y):
                    dy[j] = coef * rr[j]
                _gemm(1, 0, d_y, d, bsz, 1.0, &dy[0], d_y, &xs[(i + 1) * bsz * d], d, 1.0, gr + off_r, d)
                _gemm(0, 0, bsz, d, d_y, 1.0, &dy[0], d_y, th + off_r, d, 1.0, &g[0], d)
            # w_out, b_out
            _gemm(1, 0, d, h, bsz, 1.0, &g[0], d, &acts[i * bsz * h], h, 0.0,
                  gr + off0 + i * blk + h * d + h, h)
            _col_sums(gr + off0 + i * blk + h * d + h + d * h, &g[0], bsz, d)
            # through the ReLU
            _gemm(0, 0, bsz, h, d, 1.0, &g[0], d, w_out, h, 0.0, &dz[0], h)
            z = &zs[i * bsz * h]
            for j in range(bsz * h):
                if not z[j] > 0.0:
                    dz[j] = 0.0
            # w_in, b_in
            _gemm(1, 0, h, d, bsz, 1.0, &dz[0], h, xprev, d, 0.0, gr + off0 + i * blk, d)
            _col_sums(gr + off0 + i * blk + h * d, &dz[0], bsz, h)
            _gemm(0, 0, bsz, d, h, 1.0, &dz[0], h, w_in, d, 1.0, &g[0], d)
        _gemm(1, 0, d, d_in, bsz, 1.0, &g[0], d, px, d_in, 0.0, gr, d_in)
        _col_sums(gr + d * d_in, &g[0], bsz, d)

    return float(loss), per_layer_arr
