# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: LSTM gate recurrence and CTC lattice.

Numerically equivalent to the numpy reference backend; the win is removing
per-timestep Python dispatch from the sequential loops. Per-step matrix
products go through BLAS (scipy's cython bindings).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, tanh
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused floating:
    float
    double

cdef double NEG_INF = -np.inf


cdef inline floating _sigmoid(floating x) noexcept nogil:
    cdef floating e
    if x >= 0:
        return <floating>(1.0) / (<floating>(1.0) + exp(-x))
    e = exp(x)
    return e / (<floating>(1.0) + e)


cdef inline void _gemm(char transa, char transb, int m, int n, int k,
                       floating* a, int lda, floating* b, int ldb,
                       floating beta, floating* c, int ldc) noexcept nogil:
    cdef float alpha_s = 1.0, beta_s
    cdef double alpha_d = 1.0, beta_d
    if floating is float:
        beta_s = <float>beta
        sgemm(&transa, &transb, &m, &n, &k, &alpha_s, <float*>a, &lda,
              <float*>b, &ldb, &beta_s, <float*>c, &ldc)
    else:
        beta_d = <double>beta
        dgemm(&transa, &transb, &m, &n, &k, &alpha_d, <double*>a, &lda,
              <double*>b, &ldb, &beta_d, <double*>c, &ldc)


def lstm_forward(floating[:, :, ::1] xp, floating[:, ::1] wh,
                 floating[:, ::1] h0, floating[:, ::1] c0):
    """Gate recurrence over precomputed input projections.

    Mirrors the reference backend: gate order i, f, g, o; returns
    (h, activated gates, cell states).
    """
    cdef Py_ssize_t n = xp.shape[0], t_len = xp.shape[1], h4 = xp.shape[2]
    cdef Py_ssize_t h = h4 // 4

    dtype = np.float32 if floating is float else np.float64
    gates_arr = np.asarray(xp).copy()
    hs_arr = np.empty((n, t_len, h), dtype=dtype)
    cs_arr = np.empty((n, t_len, h), dtype=dtype)
    cdef floating[:, :, ::1] gates = gates_arr
    cdef floating[:, :, ::1] hs = hs_arr
    cdef floating[:, :, ::1] cs = cs_arr

    cdef Py_ssize_t t, nn, j
    cdef floating gi, gf, gg, go, c, cprev
    cdef floating* hprev_ptr
    cdef int hprev_ld
    cdef int m_i = <int>h4, n_i = <int>n, k_i = <int>h
    cdef int ldc = <int>(t_len * h4)

    with nogil:
        for t in range(t_len):
            if t == 0:
                hprev_ptr = &h0[0, 0]
                hprev_ld = <int>h
            else:
                hprev_ptr = &hs[0, t - 1, 0]
                hprev_ld = <int>(t_len * h)
            # gates[:, t, :] += h_prev @ wh
            _gemm(c'N', c'N', m_i, n_i, k_i, &wh[0, 0], m_i,
                  hprev_ptr, hprev_ld, <floating>1.0, &gates[0, t, 0], ldc)
            for nn in range(n):
                for j in range(h):
                    gi = _sigmoid(gates[nn, t, j])
                    gf = _sigmoid(gates[nn, t, h + j])
                    gg = tanh(gates[nn, t, 2 * h + j])
                    go = _sigmoid(gates[nn, t, 3 * h + j])
                    cprev = c0[nn, j] if t == 0 else cs[nn, t - 1, j]
                    c = gf * cprev + gi * gg
                    gates[nn, t, j] = gi
                    gates[nn, t, h + j] = gf
                    gates[nn, t, 2 * h + j] = gg
                    gates[nn, t, 3 * h + j] = go
                    cs[nn, t, j] = c
                    hs[nn, t, j] = go * tanh(c)
    return hs_arr, gates_arr, cs_arr


def lstm_backward(floating[:, :, ::1] grad_h, floating[:, ::1] wh,
                  floating[:, ::1] h0, floating[:, ::1] c0,
                  floating[:, :, ::1] hs, floating[:, :, ::1] gates,
                  floating[:, :, ::1] cs):
    cdef Py_ssize_t n = hs.shape[0], t_len = hs.shape[1], h = hs.shape[2]
    cdef Py_ssize_t h4 = 4 * h

    dtype = np.float32 if floating is float else np.float64
    dxp_arr = np.empty((n, t_len, h4), dtype=dtype)
    dwh_arr = np.zeros((h, h4), dtype=dtype)
    dh_next_arr = np.zeros((n, h), dtype=dtype)
    dc_next_arr = np.zeros((n, h), dtype=dtype)
    cdef floating[:, :, ::1] dxp = dxp_arr
    cdef floating[:, ::1] dwh = dwh_arr
    cdef floating[:, ::1] dh_next = dh_next_arr
    cdef floating[:, ::1] dc_next = dc_next_arr

    cdef Py_ssize_t t, nn, j
    cdef floating gi, gf, gg, go, tc, cprev, dh, dc
    cdef floating* hprev_ptr
    cdef int hprev_ld
    cdef int m4 = <int>h4, n_i = <int>n, h_i = <int>h
    cdef int ldslice = <int>(t_len * h4)

    with nogil:
        for t in range(t_len - 1, -1, -1):
            for nn in range(n):
                for j in range(h):
                    gi = gates[nn, t, j]
                    gf = gates[nn, t, h + j]
                    gg = gates[nn, t, 2 * h + j]
                    go = gates[nn, t, 3 * h + j]
                    tc = tanh(cs[nn, t, j])
                    cprev = c0[nn, j] if t == 0 else cs[nn, t - 1, j]
                    dh = grad_h[nn, t, j] + dh_next[nn, j]
                    dc = dh * go * (<floating>1.0 - tc * tc) + dc_next[nn, j]
                    dxp[nn, t, j] = dc * gg * gi * (<floating>1.0 - gi)
                    dxp[nn, t, h + j] = dc * cprev * gf * (<floating>1.0 - gf)
                    dxp[nn, t, 2 * h + j] = dc * gi * (<floating>1.0 - gg * gg)
                    dxp[nn, t, 3 * h + j] = dh * tc * go * (<floating>1.0 - go)
                    dc_next[nn, j] = dc * gf
            if t == 0:
                hprev_ptr = &h0[0, 0]
                hprev_ld = h_i
            else:
                hprev_ptr = &hs[0, t - 1, 0]
                hprev_ld = <int>(t_len * h)
            # dwh += h_prev.T @ da
            _gemm(c'N', c'T', m4, h_i, n_i, &dxp[0, t, 0], ldslice,
                  hprev_ptr, hprev_ld, <floating>1.0, &dwh[0, 0], m4)
            # dh_next = da @ wh.T
            _gemm(c'T', c'N', h_i, n_i, m4, &wh[0, 0], m4,
                  &dxp[0, t, 0], ldslice, <floating>0.0, &dh_next[0, 0], h_i)
    return dxp_arr, dwh_arr


def stage_forward(floating[:, :, ::1] x, floating[:, :, ::1] w, floating[::1] bias,
                  floating[::1] gamma, floating[::1] beta,
                  floating[::1] run_mean, floating[::1] run_var,
                  double momentum, double eps, int pool, bint train):
    """Fused extractor stage: causal conv + batch norm + ReLU + max-pool.

    Matches the reference backend bit-for-bit up to summation order.
    """
    cdef Py_ssize_t n = x.shape[0], t_len = x.shape[1], c_in = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], c_out = w.shape[2]
    cdef Py_ssize_t t_out = t_len // pool

    dtype = np.float32 if floating is float else np.float64
    conv_arr = np.empty((n, t_len, c_out), dtype=dtype)
    pooled_arr = np.empty((n, t_out, c_out), dtype=dtype)
    sel_arr = np.zeros((n, t_out, c_out), dtype=np.uint8)
    mean_arr = np.empty(c_out, dtype=dtype)
    istd_arr = np.empty(c_out, dtype=dtype)
    cdef floating[:, :, ::1] conv = conv_arr
    cdef floating[:, :, ::1] pooled = pooled_arr
    cdef cnp.uint8_t[:, :, ::1] sel = sel_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] istd = istd_arr

    sums = np.zeros(c_out, dtype=np.float64)
    sumsq = np.zeros(c_out, dtype=np.float64)
    cdef double[::1] s1 = sums
    cdef double[::1] s2 = sumsq

    cdef Py_ssize_t nn, t, i, ci, co, s, j, best
    cdef floating xv, v, vbest, scale_i, shift_i
    cdef double mu, var, cnt

    with nogil:
        # causal convolution: output frame t sees x[t-k+1 .. t]
        for nn in range(n):
            for t in range(t_len):
                for co in range(c_out):
                    conv[nn, t, co] = bias[co]
                for i in range(k):
                    s = t - (k - 1) + i
                    if s < 0:
                        continue
                    for ci in range(c_in):
                        xv = x[nn, s, ci]
                        for co in range(c_out):
                            conv[nn, t, co] += xv * w[i, ci, co]

        if train:
            for nn in range(n):
                for t in range(t_len):
                    for co in range(c_out):
                        v = conv[nn, t, co]
                        s1[co] += v
                        s2[co] += <double>v * <double>v
            cnt = <double>(n * t_len)
            for co in range(c_out):
                mu = s1[co] / cnt
                var = s2[co] / cnt - mu * mu
                if var < 0:
                    var = 0
                mean[co] = <floating>mu
                istd[co] = <floating>(1.0 / ((var + eps) ** 0.5))
                run_mean[co] = <floating>(momentum * run_mean[co] + (1.0 - momentum) * mu)
                run_var[co] = <floating>(momentum * run_var[co] + (1.0 - momentum) * var)
        else:
            for co in range(c_out):
                mean[co] = run_mean[co]
                istd[co] = <floating>(1.0 / ((<double>run_var[co] + eps) ** 0.5))

        # normalize + ReLU + pool in one sweep
        for nn in range(n):
            for t in range(t_out):
                for co in range(c_out):
                    scale_i = istd[co] * gamma[co]
                    shift_i = beta[co] - mean[co] * scale_i
                    best = 0
                    vbest = conv[nn, t * pool, co] * scale_i + shift_i
                    if vbest < 0:
                        vbest = 0
                    for j in range(1, pool):
                        v = conv[nn, t * pool + j, co] * scale_i + shift_i
                        if v < 0:
                            v = 0
                        if v > vbest:
                            vbest = v
                            best = j
                    pooled[nn, t, co] = vbest
                    sel[nn, t, co] = <cnp.uint8_t>best
    return pooled_arr, conv_arr, mean_arr, istd_arr, sel_arr


def stage_backward(floating[:, :, ::1] grad_pooled, floating[:, :, ::1] x,
                   floating[:, :, ::1] w, floating[::1] gamma, floating[::1] beta,
                   floating[:, :, ::1] conv, floating[::1] mean, floating[::1] istd,
                   cnp.uint8_t[:, :, ::1] sel, int pool):
    cdef Py_ssize_t n = x.shape[0], t_len = x.shape[1], c_in = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], c_out = w.shape[2]
    cdef Py_ssize_t t_out = grad_pooled.shape[1]

    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, t_len, c_in), dtype=dtype)
    dw_arr = np.zeros((k, c_in, c_out), dtype=dtype)
    dbias_arr = np.zeros(c_out, dtype=dtype)
    dgamma_arr = np.zeros(c_out, dtype=dtype)
    dbeta_arr = np.zeros(c_out, dtype=dtype)
    dconv_arr = np.zeros((n, t_len, c_out), dtype=dtype)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef floating[:, :, ::1] dw = dw_arr
    cdef floating[::1] dbias = dbias_arr
    cdef floating[::1] dgamma = dgamma_arr
    cdef floating[::1] dbeta = dbeta_arr
    cdef floating[:, :, ::1] dconv = dconv_arr

    cdef Py_ssize_t nn, t, i, ci, co, s, j
    cdef floating g, xh, acc, dcv
    cdef double cnt = <double>(n * t_len)
    cdef floating c1, c2

    with nogil:
        # scatter pooled grads through argmax + ReLU gate; reduce BN stats
        for nn in range(n):
            for t in range(t_out):
                for co in range(c_out):
                    j = <Py_ssize_t>sel[nn, t, co]
                    s = t * pool + j
                    xh = (conv[nn, s, co] - mean[co]) * istd[co]
                    if xh * gamma[co] + beta[co] > 0:
                        g = grad_pooled[nn, t, co]
                        dconv[nn, s, co] = g  # holds g_y until the BN pass
                        dgamma[co] += g * xh
                        dbeta[co] += g

        # batch-norm backward (training statistics)
        for nn in range(n):
            for t in range(t_len):
                for co in range(c_out):
                    c1 = <floating>(gamma[co] * dbeta[co] / cnt)
                    c2 = <floating>(gamma[co] * dgamma[co] / cnt)
                    xh = (conv[nn, t, co] - mean[co]) * istd[co]
                    dcv = istd[co] * (dconv[nn, t, co] * gamma[co] - c1 - xh * c2)
                    dconv[nn, t, co] = dcv
                    dbias[co] += dcv

        # convolution backward: weight grads and input grads
        for nn in range(n):
            for t in range(t_len):
                for i in range(k):
                    s = t - (k - 1) + i
                    if s < 0:
                        continue
                    for ci in range(c_in):
                        xv_acc(x, dconv, dw, dx, nn, t, s, i, ci, c_out, w)
    return dx_arr, dw_arr, dbias_arr, dgamma_arr, dbeta_arr


cdef inline void xv_acc(floating[:, :, ::1] x, floating[:, :, ::1] dconv,
                        floating[:, :, ::1] dw, floating[:, :, ::1] dx,
                        Py_ssize_t nn, Py_ssize_t t, Py_ssize_t s, Py_ssize_t i,
                        Py_ssize_t ci, Py_ssize_t c_out,
                        floating[:, :, ::1] w) noexcept nogil:
    cdef Py_ssize_t co
    cdef floating xv = x[nn, s, ci]
    cdef floating acc = 0
    for co in range(c_out):
        dw[i, ci, co] += xv * dconv[nn, t, co]
        acc += w[i, ci, co] * dconv[nn, t, co]
    dx[nn, s, ci] += acc


cdef inline double _lse(double a, double b) noexcept nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + log1p(exp(b - a))


def ctc_forward_backward(double[:, ::1] log_probs, ext_labels):
    """CTC loss and gradient w.r.t. the log-probs (see reference backend)."""
    cdef cnp.int64_t[::1] ext = np.ascontiguousarray(ext_labels, dtype=np.int64)
    cdef Py_ssize_t t_len = log_probs.shape[0]
    cdef Py_ssize_t n_classes = log_probs.shape[1]
    cdef Py_ssize_t s_len = ext.shape[0]

    alpha_arr = np.full((t_len, s_len), NEG_INF)
    beta_arr = np.full((t_len, s_len), NEG_INF)
    grad_arr = np.zeros((t_len, n_classes))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    skip_arr = np.zeros(s_len, dtype=np.uint8)
    cdef cnp.uint8_t[::1] can_skip = skip_arr
    cdef Py_ssize_t s, t
    cdef double acc, loglik, g

    for s in range(3, s_len, 2):  # odd positions hold labels
        if ext[s] != ext[s - 2]:
            can_skip[s] = 1

    with nogil:
        alpha[0, 0] = log_probs[0, ext[0]]
        if s_len > 1:
            alpha[0, 1] = log_probs[0, ext[1]]
        for t in range(1, t_len):
            for s in range(s_len):
                acc = alpha[t - 1, s]
                if s >= 1:
                    acc = _lse(acc, alpha[t - 1, s - 1])
                if s >= 2 and can_skip[s]:
                    acc = _lse(acc, alpha[t - 1, s - 2])
                alpha[t, s] = acc + log_probs[t, ext[s]]

        loglik = alpha[t_len - 1, s_len - 1]
        if s_len > 1:
            loglik = _lse(loglik, alpha[t_len - 1, s_len - 2])

    if loglik == NEG_INF or loglik != loglik:
        return np.inf, grad_arr

    with nogil:
        beta[t_len - 1, s_len - 1] = 0.0
        if s_len > 1:
            beta[t_len - 1, s_len - 2] = 0.0
        for t in range(t_len - 2, -1, -1):
            for s in range(s_len):
                acc = beta[t + 1, s] + log_probs[t + 1, ext[s]]
                if s + 1 < s_len:
                    acc = _lse(acc, beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
                if s + 2 < s_len and can_skip[s + 2]:
                    acc = _lse(acc, beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
                beta[t, s] = acc

        for t in range(t_len):
            for s in range(s_len):
                g = alpha[t, s] + beta[t, s] - loglik
                if g > -700.0:
                    grad[t, ext[s]] -= exp(g)

    return float(-loglik), grad_arr
