# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RNN kernels. Same contracts as ``_fallback``.

The batch is run in lockstep over time: one ``dgemm`` per step advances every
sequence, and the output layer and weight gradients are single ``dgemm`` calls
over all target positions. The elementwise work (tanh, softmax, the loss terms)
is fused into plain loops that the compiler vectorizes. All arrays are
row-major, so each BLAS call is written against the column-major transpose.
"""
import numpy as np

from libc.math cimport exp, log, tanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm


cdef struct Layout:
    int B          # sequences
    int steps      # longest sequence length - 1
    int N          # target positions


cdef Layout _layout(const long long[::1] offsets, const long long[::1] prefix):
    cdef Layout lay
    cdef Py_ssize_t b, L
    lay.B = <int>(offsets.shape[0] - 1)
    lay.steps = 0
    lay.N = 0
    for b in range(lay.B):
        L = offsets[b + 1] - offsets[b]
        if L - 1 > lay.steps:
            lay.steps = <int>(L - 1)
        lay.N += <int>(L - prefix[b])
    return lay


cdef void _run(const double* E, const double* W, const long long* tokens, const long long* offsets,
               Layout lay, int H, double* hs) noexcept nogil:
    # hs[s + 1, b] = tanh(E[x_bs] + W hs[s, b]); hs[0] = 0; finished sequences read token 0
    cdef int s, b, i, BH = lay.B * H
    cdef long long x
    cdef double d_one = 1.0
    cdef char tr = b'T', nt = b'N'
    cdef double* out
    memset(hs, 0, BH * sizeof(double))
    for s in range(lay.steps):
        out = hs + (s + 1) * BH
        for b in range(lay.B):
            x = tokens[offsets[b] + s] if s < offsets[b + 1] - offsets[b] - 1 else 0
            memcpy(out + b * H, E + x * H, H * sizeof(double))
        dgemm(&tr, &nt, &H, &lay.B, &H, &d_one, <double*>W, &H, hs + s * BH, &H, &d_one, out, &H)
        for i in range(BH):
            out[i] = tanh(out[i])


cdef void _gather(const double* hs, const long long* offsets, const long long* prefix, Layout lay,
                  int H, double* hsel) noexcept nogil:
    # rows of hs that predict a target, sequence-major
    cdef int b, s, t = 0
    cdef int BH = lay.B * H
    for b in range(lay.B):
        for s in range(<int>prefix[b] - 1, <int>(offsets[b + 1] - offsets[b] - 1)):
            memcpy(hsel + t * H, hs + (s + 1) * BH + b * H, H * sizeof(double))
            t += 1


cdef void _log_softmax(const double* U, const double* c, const double* hsel, int N, int V, int H,
                       double* z) noexcept nogil:
    # z (N x V) = log_softmax(hsel @ U.T + c)
    cdef int r, v
    cdef double d_one = 1.0, zmax, total
    cdef char tr = b'T', nt = b'N'
    cdef double* row
    for r in range(N):
        memcpy(z + r * V, c, V * sizeof(double))
    dgemm(&tr, &nt, &V, &N, &H, &d_one, <double*>U, &H, <double*>hsel, &H, &d_one, z, &V)
    for r in range(N):
        row = z + r * V
        zmax = row[0]
        for v in range(1, V):
            if row[v] > zmax:
                zmax = row[v]
        total = 0.0
        for v in range(V):
            total += exp(row[v] - zmax)
        total = log(total) + zmax
        for v in range(V):
            row[v] -= total


def forward_logprobs(const double[:, ::1] E, const double[:, ::1] W, const double[:, ::1] U,
                     const double[::1] c, const long long[::1] tokens,
                     const long long[::1] offsets, const long long[::1] prefix):
    cdef int V = U.shape[0], H = W.shape[0]
    cdef Layout lay = _layout(offsets, prefix)
    out_arr = np.empty((lay.N, V))
    cdef double[:, ::1] out = out_arr
    cdef double[:, :, ::1] hs = np.empty((lay.steps + 1, lay.B, H))
    cdef double[:, ::1] hsel = np.empty((lay.N, H))
    with nogil:
        _run(&E[0, 0], &W[0, 0], &tokens[0], &offsets[0], lay, H, &hs[0, 0, 0])
        _gather(&hs[0, 0, 0], &offsets[0], &prefix[0], lay, H, &hsel[0, 0])
        _log_softmax(&U[0, 0], &c[0], &hsel[0, 0], lay.N, V, H, &out[0, 0])
    return out_arr


def loss_grad(const double[:, ::1] E, const double[:, ::1] W, const double[:, ::1] U,
              const double[::1] c, const long long[::1] tokens,
              const long long[::1] offsets, const long long[::1] prefix,
              ref_logp_obj, double beta, double alpha, double scale,
              double[:, ::1] gE, double[:, ::1] gW, double[:, ::1] gU, double[::1] gc):
    cdef int V = U.shape[0], H = W.shape[0]
    cdef Layout lay = _layout(offsets, prefix)
    cdef int B = lay.B, BH = lay.B * H, steps = lay.steps, N = lay.N
    cdef int r, v, i, b, s, t, K
    cdef long long y
    cdef double ce_sum = 0.0, kl_sum = 0.0, ent_sum = 0.0, ent, pv, rv
    cdef double d_one = 1.0, d_zero = 0.0
    cdef char tr = b'T', nt = b'N'
    cdef double* lp
    cdef double* dzr
    cdef double* da
    cdef double* h
    cdef double* cr
    cdef const double* rl
    cdef double[:, ::1] ref_logp
    cdef bint use_kl = beta != 0.0
    if use_kl:
        ref_logp = ref_logp_obj
    else:
        ref_logp = np.zeros((1, V))

    cdef double[:, :, ::1] hs = np.empty((steps + 1, B, H))
    cdef double[:, ::1] hsel = np.empty((N, H))
    cdef double[:, ::1] logp = np.empty((N, V))
    cdef double[:, ::1] dz = np.empty((N, V))
    cdef double[:, ::1] dhsel = np.empty((N, H))
    cdef double[:, :, ::1] dA = np.zeros((steps, B, H))
    cdef double[:, ::1] carry = np.zeros((B, H))

    with nogil:
        _run(&E[0, 0], &W[0, 0], &tokens[0], &offsets[0], lay, H, &hs[0, 0, 0])
        _gather(&hs[0, 0, 0], &offsets[0], &prefix[0], lay, H, &hsel[0, 0])
        _log_softmax(&U[0, 0], &c[0], &hsel[0, 0], N, V, H, &logp[0, 0])

        # dz = d loss / d logits, one row per target, already scaled
        t = 0
        for b in range(B):
            for s in range(<int>prefix[b] - 1, <int>(offsets[b + 1] - offsets[b] - 1)):
                lp = &logp[t, 0]
                dzr = &dz[t, 0]
                y = tokens[offsets[b] + s + 1]
                ent = 0.0
                for v in range(V):
                    pv = exp(lp[v])
                    dzr[v] = pv
                    ent -= pv * lp[v]
                ce_sum -= lp[y]
                ent_sum += ent
                if alpha != 0.0:
                    for v in range(V):
                        dzr[v] += alpha * dzr[v] * (lp[v] + ent)
                if use_kl:
                    rl = &ref_logp[t, 0]
                    for v in range(V):
                        rv = exp(rl[v])
                        kl_sum += rv * (rl[v] - lp[v])
                        dzr[v] += beta * (exp(lp[v]) - rv)
                dzr[y] -= 1.0
                for v in range(V):
                    dzr[v] *= scale
                    gc[v] += dzr[v]
                t += 1

        # gU += dz.T @ hsel; dhsel = dz @ U
        dgemm(&nt, &tr, &H, &V, &N, &d_one, &hsel[0, 0], &H, &dz[0, 0], &V, &d_one, &gU[0, 0], &H)
        dgemm(&nt, &nt, &H, &N, &V, &d_one, <double*>&U[0, 0], &H, &dz[0, 0], &V, &d_zero, &dhsel[0, 0], &H)
        # scatter output gradients to their steps
        t = 0
        for b in range(B):
            for s in range(<int>prefix[b] - 1, <int>(offsets[b + 1] - offsets[b] - 1)):
                memcpy(&dA[s, b, 0], &dhsel[t, 0], H * sizeof(double))
                t += 1

        # backward through time; dA[s] holds the output gradient, then the pre-activation gradient
        cr = &carry[0, 0]
        for s in range(steps - 1, -1, -1):
            da = &dA[s, 0, 0]
            h = &hs[s + 1, 0, 0]
            for i in range(BH):
                da[i] = (da[i] + cr[i]) * (1.0 - h[i] * h[i])
            for b in range(B):
                if s < offsets[b + 1] - offsets[b] - 1:
                    y = tokens[offsets[b] + s]
                    for i in range(H):
                        gE[y, i] += da[b * H + i]
            if s > 0:
                # carry = da @ W
                dgemm(&nt, &nt, &H, &B, &H, &d_one, <double*>&W[0, 0], &H, da, &H, &d_zero, cr, &H)
        # gW += sum over steps of da[s].T @ hs[s]
        K = steps * B
        dgemm(&nt, &tr, &H, &H, &K, &d_one, &hs[0, 0, 0], &H, &dA[0, 0, 0], &H, &d_one, &gW[0, 0], &H)
    return ce_sum, kl_sum, ent_sum
