# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused LSTM sequence kernels; semantics match lstn.kernels.pure."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "compiled"


cdef inline double _sig(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline void _gemm_rm(char opa, char opb, int m, int n, int k,
                          double alpha, const double* a, int lda,
                          const double* b, int ldb,
                          double beta, double* c, int ldc) nogil:
    # Row-major C(m,n) = opa(A) @ opb(B): swap operands for column-major BLAS.
    dgemm(&opb, &opa, &n, &m, &k, &alpha, <double*>b, &ldb,
          <double*>a, &lda, &beta, c, &ldc)


def lstm_seq_forward(double[:, ::1] xproj, double[:, ::1] h0,
                     double[:, ::1] c0, double[:, ::1] Wh, double[::1] b):
    cdef int T = xproj.shape[0]
    cdef int B = h0.shape[0]
    cdef int H = h0.shape[1]
    cdef int H4 = 4 * H
    if xproj.shape[1] != H4 or Wh.shape[0] != H or Wh.shape[1] != H4 or b.shape[0] != H4:
        raise ValueError("kernel shape mismatch")

    hs_arr = np.empty((T, B, H))
    cs_arr = np.empty((T, B, H))
    gates_arr = np.empty((T, B, H4))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] gates = gates_arr

    cdef int t, r, j
    cdef double gi, gf, gg, go, cc
    cdef const double* h_prev
    with nogil:
        for t in range(T):
            h_prev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            # gates[t] := h_prev @ Wh, elementwise parts added below
            _gemm_rm(b'N', b'N', B, H4, H, 1.0, h_prev, H,
                     &Wh[0, 0], H4, 0.0, &gates[t, 0, 0], H4)
            for r in range(B):
                for j in range(H):
                    gi = _sig(gates[t, r, j] + xproj[t, j] + b[j])
                    gf = _sig(gates[t, r, H + j] + xproj[t, H + j] + b[H + j])
                    gg = tanh(gates[t, r, 2 * H + j] + xproj[t, 2 * H + j] + b[2 * H + j])
                    go = _sig(gates[t, r, 3 * H + j] + xproj[t, 3 * H + j] + b[3 * H + j])
                    cc = gf * (c0[r, j] if t == 0 else cs[t - 1, r, j]) + gi * gg
                    gates[t, r, j] = gi
                    gates[t, r, H + j] = gf
                    gates[t, r, 2 * H + j] = gg
                    gates[t, r, 3 * H + j] = go
                    cs[t, r, j] = cc
                    hs[t, r, j] = go * tanh(cc)
    return hs_arr, cs_arr, gates_arr


def lstm_seq_backward(double[:, :, ::1] dhs, double[:, ::1] dc_last,
                      double[:, ::1] h0, double[:, ::1] c0, double[:, ::1] Wh,
                      double[:, :, ::1] hs, double[:, :, ::1] cs,
                      double[:, :, ::1] gates):
    cdef int T = hs.shape[0]
    cdef int B = hs.shape[1]
    cdef int H = hs.shape[2]
    cdef int H4 = 4 * H

    dxproj_arr = np.empty((T, H4))
    dWh_arr = np.zeros((H, H4))
    dh_arr = np.zeros((B, H))
    dc_arr = np.array(dc_last, copy=True)
    dz_arr = np.empty((B, H4))
    cdef double[:, ::1] dxproj = dxproj_arr
    cdef double[:, ::1] dWh = dWh_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dc = dc_arr
    cdef double[:, ::1] dz = dz_arr

    cdef int t, r, j
    cdef double gi, gf, gg, go, tc, dht, dct, acc
    cdef const double* h_prev
    with nogil:
        for t in range(T - 1, -1, -1):
            for r in range(B):
                for j in range(H):
                    gi = gates[t, r, j]
                    gf = gates[t, r, H + j]
                    gg = gates[t, r, 2 * H + j]
                    go = gates[t, r, 3 * H + j]
                    tc = tanh(cs[t, r, j])
                    dht = dhs[t, r, j] + dh[r, j]
                    dct = dc[r, j] + dht * go * (1.0 - tc * tc)
                    dz[r, j] = (dct * gg) * gi * (1.0 - gi)
                    dz[r, H + j] = (dct * (c0[r, j] if t == 0 else cs[t - 1, r, j])) * gf * (1.0 - gf)
                    dz[r, 2 * H + j] = (dct * gi) * (1.0 - gg * gg)
                    dz[r, 3 * H + j] = (dht * tc) * go * (1.0 - go)
                    dc[r, j] = dct * gf
            for j in range(H4):
                acc = 0.0
                for r in range(B):
                    acc += dz[r, j]
                dxproj[t, j] = acc
            h_prev = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            # dWh += h_prev.T @ dz ; dh = dz @ Wh.T
            _gemm_rm(b'T', b'N', H, H4, B, 1.0, h_prev, H,
                     &dz[0, 0], H4, 1.0, &dWh[0, 0], H4)
            _gemm_rm(b'N', b'T', B, H, H4, 1.0, &dz[0, 0], H4,
                     &Wh[0, 0], H4, 0.0, &dh[0, 0], H)
    return dxproj_arr, dh_arr, dc_arr, dWh_arr
