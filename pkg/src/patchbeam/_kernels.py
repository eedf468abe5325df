"""Data-parallel kernels for the Gibbs sweep.

Every kernel is bit-deterministic for any worker count: each output
element is produced by exactly one thread running a fixed sequential
reduction.  Cross-patch reductions (atom moments, residual norms) use a
fixed block size, with per-block partials merged in block order, so the
result does not depend on how blocks are scheduled onto threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

BLOCK = 512  # patches per reduction block; fixed, never tied to thread count


@njit(parallel=True, cache=True)
def residual_full(values, observed, usage, weights, atoms, out):
    """out[i, p] = values[i, p] - sum_k usage[i,k]*weights[i,k]*atoms[k,p], observed only."""
    n, p_len = values.shape
    k_len = atoms.shape[0]
    for i in prange(n):
        for p in range(p_len):
            out[i, p] = values[i, p] if observed[i, p] else 0.0
        for k in range(k_len):
            if usage[i, k]:
                w = weights[i, k]
                for p in range(p_len):
                    if observed[i, p]:
                        out[i, p] -= w * atoms[k, p]


@njit(parallel=True, cache=True)
def atom_moments(resid, observed, w_col):
    """Per-pixel sums over patches for one atom's posterior.

    Returns (A, C) with A[p] = sum_i observed[i,p] * w_col[i]^2 and
    C[p] = sum_i observed[i,p] * w_col[i] * resid[i,p].
    """
    n, p_len = resid.shape
    nblocks = (n + BLOCK - 1) // BLOCK
    part_a = np.zeros((nblocks, p_len), dtype=np.float64)
    part_c = np.zeros((nblocks, p_len), dtype=np.float64)
    for b in prange(nblocks):
        lo = b * BLOCK
        hi = min(lo + BLOCK, n)
        for i in range(lo, hi):
            w = w_col[i]
            if w != 0.0:
                w2 = w * w
                for p in range(p_len):
                    if observed[i, p]:
                        part_a[b, p] += w2
                        part_c[b, p] += w * resid[i, p]
    a = np.zeros(p_len, dtype=np.float64)
    c = np.zeros(p_len, dtype=np.float64)
    for b in range(nblocks):
        for p in range(p_len):
            a[p] += part_a[b, p]
            c[p] += part_c[b, p]
    return a, c


@njit(parallel=True, cache=True)
def shift_atom(resid, observed, w_col, delta):
    """resid[i, p] += w_col[i] * delta[p] on observed elements (atom replaced)."""
    n, p_len = resid.shape
    for i in prange(n):
        w = w_col[i]
        if w != 0.0:
            for p in range(p_len):
                if observed[i, p]:
                    resid[i, p] += w * delta[p]


@njit(parallel=True, cache=True)
def code_moments(resid, observed, atom):
    """Per-patch projections onto one atom.

    Returns (u, v) with u[i] = sum_{p in Omega_i} atom[p]^2 and
    v[i] = sum_{p in Omega_i} atom[p] * resid[i,p].
    """
    n, p_len = resid.shape
    u = np.empty(n, dtype=np.float64)
    v = np.empty(n, dtype=np.float64)
    for i in prange(n):
        acc_u = 0.0
        acc_v = 0.0
        for p in range(p_len):
            if observed[i, p]:
                d = atom[p]
                acc_u += d * d
                acc_v += d * resid[i, p]
        u[i] = acc_u
        v[i] = acc_v
    return u, v


@njit(parallel=True, cache=True)
def shift_codes(resid, observed, atom, dw):
    """resid[i, p] += dw[i] * atom[p] on observed elements (weights replaced)."""
    n, p_len = resid.shape
    for i in prange(n):
        d = dw[i]
        if d != 0.0:
            for p in range(p_len):
                if observed[i, p]:
                    resid[i, p] += d * atom[p]


@njit(parallel=True, cache=True)
def masked_sq_norm(resid):
    """sum of resid^2 with a block-ordered reduction (resid is 0 off-mask)."""
    n, p_len = resid.shape
    nblocks = (n + BLOCK - 1) // BLOCK
    part = np.zeros(nblocks, dtype=np.float64)
    for b in prange(nblocks):
        lo = b * BLOCK
        hi = min(lo + BLOCK, n)
        acc = 0.0
        for i in range(lo, hi):
            for p in range(p_len):
                r = resid[i, p]
                acc += r * r
        part[b] = acc
    total = 0.0
    for b in range(nblocks):
        total += part[b]
    return total


@njit(parallel=True, cache=True)
def compose_estimates(usage, weights, atoms, out):
    """out[i, p] = sum_k usage[i,k]*weights[i,k]*atoms[k,p] at every element."""
    n, k_len = usage.shape
    p_len = atoms.shape[1]
    for i in prange(n):
        for p in range(p_len):
            out[i, p] = 0.0
        for k in range(k_len):
            if usage[i, k]:
                w = weights[i, k]
                for p in range(p_len):
                    out[i, p] += w * atoms[k, p]
