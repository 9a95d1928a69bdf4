# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: same contracts as ``_kernels_py``.

Convolutions unroll patches (im2col) and hand one matrix product to the BLAS
that scipy ships, so the compiled path runs a single GEMM per call.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm(char* ta, char* tb, int m, int n, int k, double* a, int lda, double* b, int ldb,
                double beta, double* c, int ldc) noexcept nogil:
    """Column-major ``C = op(A) op(B) + beta C`` via BLAS."""
    cdef double one = 1.0
    dgemm(ta, tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _im2col(const double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, double[:, ::1] col) noexcept nogil:
    """Row ``(s, i, j)`` of ``col`` holds the zero-padded ``kh x kw x cin`` patch centred on ``(i, j)``."""
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t s, i, j, di, dj, ii, jj, c, row = 0, base
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for di in range(kh):
                    ii = i + di - ph
                    for dj in range(kw):
                        jj = j + dj - pw
                        base = (di * kw + dj) * cin
                        if ii < 0 or ii >= h or jj < 0 or jj >= wd:
                            for c in range(cin):
                                col[row, base + c] = 0.0
                        else:
                            for c in range(cin):
                                col[row, base + c] = x[s, ii, jj, c]
                row += 1


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, const double[::1] b):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t m = n * h * wd, k = kh * kw * cin, r, o
    col_arr = np.empty((m, k))
    out_arr = np.empty((n, h, wd, cout))
    cdef double[:, ::1] col = col_arr
    cdef double[:, ::1] out = out_arr.reshape(m, cout)
    cdef double[:, ::1] w2 = np.ascontiguousarray(w).reshape(k, cout)
    if m == 0 or cout == 0 or k == 0:
        out_arr[...] = np.asarray(b)
        return out_arr
    with nogil:
        _im2col(x, kh, kw, col)
        for r in range(m):
            for o in range(cout):
                out[r, o] = b[o]
        # row-major out (m x cout) += col (m x k) @ w2 (k x cout), computed as its column-major transpose
        _gemm(b"N", b"N", <int>cout, <int>m, <int>k, &w2[0, 0], <int>cout, &col[0, 0], <int>k, 1.0,
              &out[0, 0], <int>cout)
    return out_arr


def conv2d_grad_input(const double[:, :, :, ::1] dout, const double[:, :, :, ::1] w):
    cdef Py_ssize_t n = dout.shape[0], h = dout.shape[1], wd = dout.shape[2], cout = dout.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cin = w.shape[2]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t m = n * h * wd, k = kh * kw * cin
    cdef Py_ssize_t s, i, j, di, dj, ii, jj, c, row = 0, base
    dx_arr = np.zeros((n, h, wd, cin))
    if m == 0 or k == 0 or cout == 0:
        return dx_arr
    dcol_arr = np.empty((m, k))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, ::1] dcol = dcol_arr
    cdef double[:, ::1] d2 = np.ascontiguousarray(dout).reshape(m, cout)
    cdef double[:, ::1] w2 = np.ascontiguousarray(w).reshape(k, cout)
    with nogil:
        # dcol (m x k) = d2 (m x cout) @ w2.T (cout x k)
        _gemm(b"T", b"N", <int>k, <int>m, <int>cout, &w2[0, 0], <int>cout, &d2[0, 0], <int>cout, 0.0,
              &dcol[0, 0], <int>k)
        # col2im: scatter each patch gradient back onto the input grid
        for s in range(n):
            for i in range(h):
                for j in range(wd):
                    for di in range(kh):
                        ii = i + di - ph
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(kw):
                            jj = j + dj - pw
                            if jj < 0 or jj >= wd:
                                continue
                            base = (di * kw + dj) * cin
                            for c in range(cin):
                                dx[s, ii, jj, c] += dcol[row, base + c]
                    row += 1
    return dx_arr


def conv2d_grad_weight(const double[:, :, :, ::1] x, const double[:, :, :, ::1] dout, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t cout = dout.shape[3]
    cdef Py_ssize_t m = n * h * wd, k = kh * kw * cin
    dw_arr = np.zeros((kh, kw, cin, cout))
    if m == 0 or k == 0 or cout == 0:
        return dw_arr
    col_arr = np.empty((m, k))
    cdef double[:, ::1] col = col_arr
    cdef double[:, ::1] d2 = np.ascontiguousarray(dout).reshape(m, cout)
    cdef double[:, ::1] dw = dw_arr.reshape(k, cout)
    with nogil:
        _im2col(x, kh, kw, col)
        # dw (k x cout) = col.T (k x m) @ d2 (m x cout)
        _gemm(b"N", b"T", <int>cout, <int>k, <int>m, &d2[0, 0], <int>cout, &col[0, 0], <int>k, 0.0,
              &dw[0, 0], <int>cout)
    return dw_arr


def rank_counts(pos, neg):
    """Return ``(#(p > q), #(p == q))`` via a merge walk over sorted inputs."""
    cdef double[::1] p = np.sort(np.ascontiguousarray(pos, dtype=np.float64))
    cdef double[::1] q = np.sort(np.ascontiguousarray(neg, dtype=np.float64))
    cdef Py_ssize_t np_ = p.shape[0], nq = q.shape[0]
    cdef Py_ssize_t a = 0, lo = 0, hi = 0
    cdef long long greater = 0, equal = 0
    with nogil:
        for a in range(np_):
            while lo < nq and q[lo] < p[a]:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < nq and q[hi] <= p[a]:
                hi += 1
            greater += lo
            equal += hi - lo
    return int(greater), int(equal)
