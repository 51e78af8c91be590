"""Pure-numpy implementations of the sampler's hot kernels.

This is the fallback path used when numba is unavailable or disabled via
``BETREES_BACKEND=numpy``.  Semantics match ``numba_backend`` exactly; the
float results agree to within a few ulp (summation order is identical, but
transcendental functions may differ between numpy's SIMD paths and libm).

Tree encoding shared by all kernels: dense arrays indexed by heap node index
(children of ``k`` at ``2k+1`` / ``2k+2``), sized ``max_node_index + 1``.
``flag[k] == 1`` marks an interior node carrying ``feat[k]`` / ``thr[k]``;
rows with ``x[feat] < thr`` go left, ties go right.
"""

import math

import numpy as np

IS_NUMBA = False


def route_rows(flag, feat, thr, X, rows, start=0):
    """Leaf index reached by each row of `rows`, walking from node `start`."""
    idx = np.full(rows.shape[0], start, dtype=np.int64)
    while True:
        interior = flag[idx] == 1
        if not interior.any():
            return idx
        ii = np.nonzero(interior)[0]
        cur = idx[ii]
        xv = X[rows[ii], feat[cur]]
        idx[ii] = np.where(xv < thr[cur], 2 * cur + 1, 2 * cur + 2)


def split_rows(X, rows, c, t):
    """Partition `rows` by x[c] < t, preserving relative order."""
    left = X[rows, c] < t
    return rows[left], rows[~left]


def leaf_stats_cont(leaf_idx, yvals, n_nodes):
    """Per-node (count, mean, centered sum of squares) for routed rows.

    Accumulation is sequential in row order (bincount), matching the numba
    loop bit-for-bit.
    """
    counts = np.bincount(leaf_idx, minlength=n_nodes)
    sums = np.bincount(leaf_idx, weights=yvals, minlength=n_nodes)
    mean = np.zeros(n_nodes)
    np.divide(sums, counts, out=mean, where=counts > 0)
    d = yvals - mean[leaf_idx]
    sse = np.bincount(leaf_idx, weights=d * d, minlength=n_nodes)
    return counts.astype(np.int64), mean, sse


def leaf_counts_cat(leaf_idx, ycodes, n_nodes, n_cat):
    """Per-node category counts for routed rows."""
    flat = np.bincount(leaf_idx * n_cat + ycodes, minlength=n_nodes * n_cat)
    return flat.reshape(n_nodes, n_cat).astype(np.int64)


def log_marginal_cont(leaves, counts, mean, sse, min_leaf, sse_floor):
    """Sum of per-leaf Gaussian log marginals under the flat 1/sigma^2 prior.

    Returns (total, min_count, n_clamped).  A leaf with n rows, centered sum
    of squares S contributes  -log(n)/2 + lgamma((n-1)/2) - ((n-1)/2)*log(pi*S),
    with S clamped from below by `sse_floor`.
    """
    total = 0.0
    min_count = np.iinfo(np.int64).max
    clamped = 0
    for k in leaves:
        n = int(counts[k])
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


def log_marginal_cat(leaves, cat_counts, min_leaf):
    """Sum of per-leaf Dirichlet-multinomial log marginals (concentration 1/2)."""
    n_cat = cat_counts.shape[1]
    lg_half = math.lgamma(0.5)
    total = 0.0
    min_count = np.iinfo(np.int64).max
    for k in leaves:
        n = 0
        acc = 0.0
        for c in range(n_cat):
            nc = int(cat_counts[k, c])
            n += nc
            acc += math.lgamma(0.5 + nc) - lg_half
        if n < min_count:
            min_count = n
        if n < min_leaf:
            continue
        total += math.lgamma(n_cat / 2.0) - math.lgamma(n_cat / 2.0 + n) + acc
    return total, min_count, 0


def obs_logdens_cont(flag, feat, thr, mu, sig2, X, y):
    """log N(y_i; mu_leaf, sig2_leaf) for every row, under the given tree."""
    rows = np.arange(X.shape[0], dtype=np.int64)
    idx = route_rows(flag, feat, thr, X, rows)
    m = mu[idx]
    v = sig2[idx]
    return -0.5 * np.log(2.0 * np.pi * v) - (y - m) ** 2 / (2.0 * v)


def obs_logdens_cat(flag, feat, thr, logp, X, ycodes):
    """log p_leaf[y_i] for every row, under the given tree."""
    rows = np.arange(X.shape[0], dtype=np.int64)
    idx = route_rows(flag, feat, thr, X, rows)
    return logp[idx, ycodes]
