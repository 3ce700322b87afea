"""Compiled inner loops (numba)."""
from __future__ import annotations

import numpy as np
from numba import njit

M_IDENTITY, M_POSITIVE, M_NEGATIVE = 0, 1, 2


@njit(cache=True)
def jump_terms(u_ext, centres, cols, omega, w, cgam, m_kind, K, B):
    """K[p] = sum_q w_q D_pq and B[p] = sum_q cgam_pq m(D_pq) with
    D_pq = sum_c omega_pqc u_ext[cols_pqc] - u_ext[centres_p]."""
    P, Q, C = cols.shape
    for p in range(P):
        uc = u_ext[centres[p]]
        k = 0.0
        b = 0.0
        for q in range(Q):
            v = -uc
            for c in range(C):
                v += omega[p, q, c] * u_ext[cols[p, q, c]]
            k += w[q] * v
            if m_kind == M_POSITIVE:
                if v < 0.0:
                    v = 0.0
            elif m_kind == M_NEGATIVE:
                if v > 0.0:
                    v = 0.0
            b += cgam[p, q] * v
        K[p] = k
        B[p] = b


@njit(cache=True, inline="always")
def _reflect(j, m):
    if 0 <= j <= m - 1:
        return j
    period = 2 * (m - 1)
    j = j % period
    if j < 0:
        j += period
    if j > m - 1:
        j = period - j
    return j


@njit(cache=True)
def sl_apply(u_ext, nodes_lat, counts, strides, centre, spread, dt, out):
    """Matrix-free semi-Lagrangian ``A u`` for a batch of rows.

    ``centre`` (P, d) and ``spread`` (P, d, p) are in lattice units.  Feet are
    reflected at every face (Neumann); callers guarantee that feet never
    leave through a non-Neumann face.  ``nodes_lat`` (P, d) gives the row's
    own lattice position (for the centre value).
    """
    P, d = centre.shape
    p_cols = spread.shape[2]
    n_feet = 2 * p_cols
    i0 = np.empty(d, dtype=np.int64)
    i1 = np.empty(d, dtype=np.int64)
    w1 = np.empty(d)
    for r in range(P):
        own = 0
        for l in range(d):
            own += nodes_lat[r, l] * strides[l]
        acc = 0.0
        for f in range(n_feet):
            k = f % p_cols
            sgn = 1.0 if f < p_cols else -1.0
            for l in range(d):
                x = centre[r, l] + sgn * spread[r, l, k]
                fl = np.floor(x)
                fr = x - fl
                if fr > 1.0 - 1e-12:
                    fl += 1.0
                    fr = 0.0
                elif fr < 1e-12:
                    fr = 0.0
                j = np.int64(fl)
                m = counts[l]
                i0[l] = _reflect(j, m) * strides[l]
                i1[l] = _reflect(j + 1, m) * strides[l] if fr > 0.0 else i0[l]
                w1[l] = fr
            val = 0.0
            for corner in range(1 << d):
                wgt = 1.0
                idx = 0
                for l in range(d):
                    if (corner >> l) & 1:
                        wgt *= w1[l]
                        idx += i1[l]
                    else:
                        wgt *= 1.0 - w1[l]
                        idx += i0[l]
                if wgt != 0.0:
                    val += wgt * u_ext[idx]
            acc += val
        out[r] = (acc / n_feet - u_ext[own]) / dt


@njit(cache=True, inline="always")
def _axis_weights(x, m, stride):
    fl = np.floor(x)
    fr = x - fl
    if fr > 1.0 - 1e-12:
        fl += 1.0
        fr = 0.0
    elif fr < 1e-12:
        fr = 0.0
    j = np.int64(fl)
    i0 = _reflect(j, m) * stride
    i1 = _reflect(j + 1, m) * stride if fr > 0.0 else i0
    return i0, i1, fr


@njit(cache=True)
def sl_apply_2d(u_ext, nodes_lat, counts, strides, centre, spread, dt, out):
    """Two-dimensional specialization of :func:`sl_apply` (same arguments)."""
    P = centre.shape[0]
    p_cols = spread.shape[2]
    mx, my = counts[0], counts[1]
    sx, sy = strides[0], strides[1]
    for r in range(P):
        own = nodes_lat[r, 0] * sx + nodes_lat[r, 1] * sy
        cx, cy = centre[r, 0], centre[r, 1]
        acc = 0.0
        for k in range(p_cols):
            dx, dy = spread[r, 0, k], spread[r, 1, k]
            for sgn in (1.0, -1.0):
                ax0, ax1, fx = _axis_weights(cx + sgn * dx, mx, sx)
                ay0, ay1, fy = _axis_weights(cy + sgn * dy, my, sy)
                lo = (1.0 - fy) * u_ext[ax0 + ay0] + fy * u_ext[ax0 + ay1]
                hi = (1.0 - fy) * u_ext[ax1 + ay0] + fy * u_ext[ax1 + ay1]
                acc += (1.0 - fx) * lo + fx * hi
        out[r] = (acc / (2 * p_cols) - u_ext[own]) / dt
