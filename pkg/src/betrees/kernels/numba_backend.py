"""numba-compiled implementations of the sampler's hot kernels.

Same contracts as ``numpy_backend``; see that module for the tree encoding.
Compiled lazily with on-disk caching, so the first call in a fresh
environment pays the JIT cost once.
"""

import math

import numpy as np
from numba import njit

IS_NUMBA = True

_I64_MAX = np.iinfo(np.int64).max


@njit(cache=True)
def route_rows(flag, feat, thr, X, rows, start=0):
    out = np.empty(rows.shape[0], dtype=np.int64)
    for i in range(rows.shape[0]):
        r = rows[i]
        k = start
        while flag[k] == 1:
            if X[r, feat[k]] < thr[k]:
                k = 2 * k + 1
            else:
                k = 2 * k + 2
        out[i] = k
    return out


@njit(cache=True)
def split_rows(X, rows, c, t):
    n_left = 0
    for i in range(rows.shape[0]):
        if X[rows[i], c] < t:
            n_left += 1
    left = np.empty(n_left, dtype=np.int64)
    right = np.empty(rows.shape[0] - n_left, dtype=np.int64)
    a = 0
    b = 0
    for i in range(rows.shape[0]):
        r = rows[i]
        if X[r, c] < t:
            left[a] = r
            a += 1
        else:
            right[b] = r
            b += 1
    return left, right


@njit(cache=True)
def leaf_stats_cont(leaf_idx, yvals, n_nodes):
    counts = np.zeros(n_nodes, dtype=np.int64)
    sums = np.zeros(n_nodes)
    for i in range(leaf_idx.shape[0]):
        counts[leaf_idx[i]] += 1
        sums[leaf_idx[i]] += yvals[i]
    mean = np.zeros(n_nodes)
    for k in range(n_nodes):
        if counts[k] > 0:
            mean[k] = sums[k] / counts[k]
    sse = np.zeros(n_nodes)
    for i in range(leaf_idx.shape[0]):
        d = yvals[i] - mean[leaf_idx[i]]
        sse[leaf_idx[i]] += d * d
    return counts, mean, sse


@njit(cache=True)
def leaf_counts_cat(leaf_idx, ycodes, n_nodes, n_cat):
    counts = np.zeros((n_nodes, n_cat), dtype=np.int64)
    for i in range(leaf_idx.shape[0]):
        counts[leaf_idx[i], ycodes[i]] += 1
    return counts


@njit(cache=True)
def log_marginal_cont(leaves, counts, mean, sse, min_leaf, sse_floor):
    total = 0.0
    min_count = _I64_MAX
    clamped = 0
    for j in range(leaves.shape[0]):
        k = leaves[j]
        n = counts[k]
        if n < min_count:
            min_count = n
        if n < min_leaf:
            continue
        s = sse[k]
        if s < sse_floor:
            s = sse_floor
            clamped += 1
        total += -0.5 * math.log(n) + math.lgamma((n - 1) / 2.0) \
            - ((n - 1) / 2.0) * math.log(math.pi * s)
    return total, min_count, clamped


@njit(cache=True)
def log_marginal_cat(leaves, cat_counts, min_leaf):
    n_cat = cat_counts.shape[1]
    lg_half = math.lgamma(0.5)
    total = 0.0
    min_count = _I64_MAX
    for j in range(leaves.shape[0]):
        k = leaves[j]
        n = 0
        acc = 0.0
        for c in range(n_cat):
            nc = cat_counts[k, c]
            n += nc
            acc += math.lgamma(0.5 + nc) - lg_half
        if n < min_count:
            min_count = n
        if n < min_leaf:
            continue
        total += math.lgamma(n_cat / 2.0) - math.lgamma(n_cat / 2.0 + n) + acc
    return total, min_count, 0


@njit(cache=True)
def obs_logdens_cont(flag, feat, thr, mu, sig2, X, y):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        k = 0
        while flag[k] == 1:
            if X[r, feat[k]] < thr[k]:
                k = 2 * k + 1
            else:
                k = 2 * k + 2
        v = sig2[k]
        d = y[r] - mu[k]
        out[r] = -0.5 * math.log(2.0 * math.pi * v) - d * d / (2.0 * v)
    return out


@njit(cache=True)
def obs_logdens_cat(flag, feat, thr, logp, X, ycodes):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        k = 0
        while flag[k] == 1:
            if X[r, feat[k]] < thr[k]:
                k = 2 * k + 1
            else:
                k = 2 * k + 2
        out[r] = logp[k, ycodes[r]]
    return out
