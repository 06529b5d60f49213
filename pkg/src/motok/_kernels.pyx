# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused motion-energy reduction and per-segment
block-diagonal attention (forward + backward) on top of BLAS gemm.

Contracts match motok._kernels_py exactly; float32 and float64 supported.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs
from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double


# C-order gemm helpers. BLAS is column-major, so a row-major product
# C = op_a(A) @ op_b(B) is computed as C^T = op_b(B)^T @ op_a(A)^T.

cdef inline void gemm_nt(real* a, real* b, real* c, int m, int n, int k,
                         real alpha, real beta) noexcept nogil:
    # C[m,n] = alpha * A[m,k] @ B[n,k]^T + beta * C
    cdef char ct = b'T', cn = b'N'
    if real is float:
        sgemm(&ct, &cn, &n, &m, &k, <float*>&alpha, <float*>b, &k, <float*>a, &k,
              <float*>&beta, <float*>c, &n)
    else:
        dgemm(&ct, &cn, &n, &m, &k, <double*>&alpha, <double*>b, &k, <double*>a, &k,
              <double*>&beta, <double*>c, &n)


cdef inline void gemm_nn(real* a, real* b, real* c, int m, int n, int k,
                         real alpha, real beta) noexcept nogil:
    # C[m,n] = alpha * A[m,k] @ B[k,n] + beta * C
    cdef char cn = b'N'
    if real is float:
        sgemm(&cn, &cn, &n, &m, &k, <float*>&alpha, <float*>b, &n, <float*>a, &k,
              <float*>&beta, <float*>c, &n)
    else:
        dgemm(&cn, &cn, &n, &m, &k, <double*>&alpha, <double*>b, &n, <double*>a, &k,
              <double*>&beta, <double*>c, &n)


cdef inline void gemm_tn(real* a, real* b, real* c, int m, int n, int k,
                         real alpha, real beta) noexcept nogil:
    # C[m,n] = alpha * A[k,m]^T @ B[k,n] + beta * C
    cdef char ct = b'T', cn = b'N'
    if real is float:
        sgemm(&cn, &ct, &n, &m, &k, <float*>&alpha, <float*>b, &n, <float*>a, &m,
              <float*>&beta, <float*>c, &n)
    else:
        dgemm(&cn, &ct, &n, &m, &k, <double*>&alpha, <double*>b, &n, <double*>a, &m,
              <double*>&beta, <double*>c, &n)


def motion_energy(real[:, :, :, ::1] video, Py_ssize_t p, Py_ssize_t t_p):
    """Fused tubelet-average -> adjacent abs-diff -> patch mean. Returns float64."""
    cdef Py_ssize_t T = video.shape[0], C = video.shape[1]
    cdef Py_ssize_t H = video.shape[2], W = video.shape[3]
    cdef Py_ssize_t n_t = T // t_p, n_x = H // p, n_y = W // p
    out_np = np.zeros((n_t - 1 if n_t > 1 else 0, n_x, n_y), dtype=np.float64)
    if n_t <= 1:
        return out_np
    cdef double[:, :, ::1] out = out_np
    reps_np = np.empty((n_t, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] reps = reps_np
    cdef double acc, inv_tp = 1.0 / t_p, inv_patch = 1.0 / (C * p * p)
    cdef Py_ssize_t t, f, c, i, j

    with nogil:
        for t in range(n_t):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        acc = 0.0
                        for f in range(t * t_p, (t + 1) * t_p):
                            acc += video[f, c, i, j]
                        reps[t, c, i, j] = acc * inv_tp
        for t in range(1, n_t):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        out[t - 1, i // p, j // p] += fabs(reps[t, c, i, j] - reps[t - 1, c, i, j])
        for t in range(n_t - 1):
            for i in range(n_x):
                for j in range(n_y):
                    out[t, i, j] *= inv_patch
    return out_np


def segment_attention_forward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                              cnp.int64_t[::1] lengths, double scale):
    cdef Py_ssize_t H = q.shape[0], N = q.shape[1], D = q.shape[2]
    cdef Py_ssize_t nseg = lengths.shape[0]
    cdef Py_ssize_t total = 0, li
    cdef Py_ssize_t si
    for si in range(nseg):
        total += lengths[si] * lengths[si]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_np = np.empty((H, N, D), dtype=dtype)
    probs_np = np.empty((H, total), dtype=dtype)
    cdef real[:, :, ::1] out = out_np
    cdef real[:, ::1] probs = probs_np
    cdef Py_ssize_t h, s, ps, i, j, l
    cdef real* sc
    cdef real m, z, one = <real>1.0, zero = <real>0.0

    with nogil:
        for h in range(H):
            s = 0
            ps = 0
            for si in range(nseg):
                l = lengths[si]
                sc = &probs[h, ps]
                gemm_nt(&q[h, s, 0], &k[h, s, 0], sc, <int>l, <int>l, <int>D,
                        <real>scale, zero)
                for i in range(l):
                    m = sc[i * l]
                    for j in range(1, l):
                        if sc[i * l + j] > m:
                            m = sc[i * l + j]
                    z = zero
                    for j in range(l):
                        sc[i * l + j] = <real>exp(sc[i * l + j] - m)
                        z += sc[i * l + j]
                    z = one / z
                    for j in range(l):
                        sc[i * l + j] *= z
                gemm_nn(sc, &v[h, s, 0], &out[h, s, 0], <int>l, <int>D, <int>l, one, zero)
                s += l
                ps += l * l
    return out_np, probs_np


def segment_attention_backward(real[:, :, ::1] g, real[:, :, ::1] q, real[:, :, ::1] k,
                               real[:, :, ::1] v, real[:, ::1] probs,
                               cnp.int64_t[::1] lengths, double scale):
    cdef Py_ssize_t H = q.shape[0], N = q.shape[1], D = q.shape[2]
    cdef Py_ssize_t nseg = lengths.shape[0]
    cdef Py_ssize_t max_l = 0, si
    for si in range(nseg):
        if lengths[si] > max_l:
            max_l = lengths[si]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dq_np = np.empty((H, N, D), dtype=dtype)
    dk_np = np.empty((H, N, D), dtype=dtype)
    dv_np = np.empty((H, N, D), dtype=dtype)
    scratch_np = np.empty(max_l * max_l, dtype=dtype)
    cdef real[:, :, ::1] dq = dq_np
    cdef real[:, :, ::1] dk = dk_np
    cdef real[:, :, ::1] dv = dv_np
    cdef real[::1] scratch = scratch_np
    cdef real* dp
    cdef real* pr
    cdef real rowdot, one = <real>1.0, zero = <real>0.0
    cdef Py_ssize_t h, s, ps, i, j, l

    with nogil:
        for h in range(H):
            s = 0
            ps = 0
            for si in range(nseg):
                l = lengths[si]
                pr = &probs[h, ps]
                dp = &scratch[0]
                # dP = g_seg @ V^T, then dS = P * (dP - rowsum(dP * P)) in place
                gemm_nt(&g[h, s, 0], &v[h, s, 0], dp, <int>l, <int>l, <int>D, one, zero)
                for i in range(l):
                    rowdot = zero
                    for j in range(l):
                        rowdot += dp[i * l + j] * pr[i * l + j]
                    for j in range(l):
                        dp[i * l + j] = pr[i * l + j] * (dp[i * l + j] - rowdot)
                gemm_nn(dp, &k[h, s, 0], &dq[h, s, 0], <int>l, <int>D, <int>l,
                        <real>scale, zero)
                gemm_tn(dp, &q[h, s, 0], &dk[h, s, 0], <int>l, <int>D, <int>l,
                        <real>scale, zero)
                gemm_tn(pr, &g[h, s, 0], &dv[h, s, 0], <int>l, <int>D, <int>l, one, zero)
                s += l
                ps += l * l
    return dq_np, dk_np, dv_np
