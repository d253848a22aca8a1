"""Compiled kernels for the Galerkin advection term in half-spectrum layout.

Half layout keeps wavevectors with last component ``k_d >= 0``; entries with
``k_d < 0`` are recovered as ``conj(c[-k])``.  For each support mode ``q`` of
the velocity and every retained ``k``

    out[k] += i (w_q . (k - q)) c[k - q],

where ``w_q`` is the (normalised) velocity coefficient at ``q``.  Loops run in
a fixed order, so results are bitwise reproducible.
"""
from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def shift_conv_half_2d(c, W, q, N, out):
    E = c.shape[0]
    n = 2 * N + 1
    for e in range(E):
        for iq in range(q.shape[0]):
            q0 = q[iq, 0]
            q1 = q[iq, 1]
            w0 = W[e, 0, iq]
            w1 = W[e, 1, iq]
            if w0 == 0 and w1 == 0:
                continue
            for a in range(n):
                s0 = a - N - q0
                if s0 < -N or s0 > N:
                    continue
                m0 = w0 * s0
                blo = max(0, q1 - N)
                bhi = min(N, q1 + N)
                for b in range(blo, bhi + 1):
                    s1 = b - q1
                    if s1 >= 0:
                        v = c[e, s0 + N, s1]
                    else:
                        v = np.conj(c[e, N - s0, -s1])
                    out[e, a, b] += 1j * (m0 + w1 * s1) * v


@nb.njit(cache=True)
def shift_conv_half_3d(c, W, q, N, out):
    E = c.shape[0]
    n = 2 * N + 1
    for e in range(E):
        for iq in range(q.shape[0]):
            q0 = q[iq, 0]
            q1 = q[iq, 1]
            q2 = q[iq, 2]
            w0 = W[e, 0, iq]
            w1 = W[e, 1, iq]
            w2 = W[e, 2, iq]
            if w0 == 0 and w1 == 0 and w2 == 0:
                continue
            clo = max(0, q2 - N)
            chi = min(N, q2 + N)
            for a in range(n):
                s0 = a - N - q0
                if s0 < -N or s0 > N:
                    continue
                m0 = w0 * s0
                for b in range(n):
                    s1 = b - N - q1
                    if s1 < -N or s1 > N:
                        continue
                    m01 = m0 + w1 * s1
                    for cc in range(clo, chi + 1):
                        s2 = cc - q2
                        if s2 >= 0:
                            v = c[e, s0 + N, s1 + N, s2]
                        else:
                            v = np.conj(c[e, N - s0, N - s1, -s2])
                        out[e, a, b, cc] += 1j * (m01 + w2 * s2) * v
