"""Gibbs sweep over tree nodes: split-flag, covariate and threshold updates
with Metropolis-Hastings acceptance against the parameter-marginalized
likelihood, followed by conditional leaf-parameter draws.

A sweep visits every current node in ascending index order (children created
by an accepted grow are visited later in the same sweep) and applies, per
node: a split-flag update (grow at a leaf / prune at an interior node whose
children are both leaves), then a covariate update and a threshold update if
the node is interior.  Proposals draw the covariate from the tree's
covariate-choice probabilities and the threshold uniformly from the node-
local valid grid (both children at least q rows); with thresholds given a
uniform prior over that same grid, the proposal terms cancel against the
prior so the grow/prune ratio reduces to

    lik_ratio * p_k (1 - p_L)(1 - p_R) / (1 - p_k),     p_k = exp(-depth/delta)

and covariate/threshold ratios reduce to the likelihood ratio times the
ratio of descendant grid normalizers.  Proposals leaving any downstream leaf
under q rows are rejected outright and counted as degenerate.
"""

import math
from bisect import insort
from dataclasses import dataclass, fields

import numpy as np

from . import kernels, likelihood
from .dataset import CONTINUOUS
from .tree import DEFAULT_DEPTH_CAP, Node, Tree, leaf_partition, node_depth


@dataclass
class SweepReport:
    """Proposal/acceptance counts for one or more sweeps."""
    grow_proposed: int = 0
    grow_accepted: int = 0
    prune_proposed: int = 0
    prune_accepted: int = 0
    covariate_proposed: int = 0
    covariate_accepted: int = 0
    threshold_proposed: int = 0
    threshold_accepted: int = 0
    degenerate_rejections: int = 0
    sse_clamps: int = 0

    def merge(self, other):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


class _SweepState:
    """Mutable packed form of one tree plus per-node row bookkeeping."""

    def __init__(self, tree, dataset, rows, delta, xi, q, depth_cap,
                 sse_floor, flatten):
        size = 2 ** (depth_cap + 1) - 1
        self.flag = np.zeros(size, dtype=np.int8)
        self.feat = np.zeros(size, dtype=np.int64)
        self.thr = np.zeros(size, dtype=np.float64)
        self.dataset = dataset
        self.delta = delta
        self.xi = np.asarray(xi, dtype=np.float64)
        self.xi_cum = np.cumsum(self.xi)
        self.q = q
        self.depth_cap = depth_cap
        self.sse_floor = sse_floor
        self.flatten = flatten
        self.report = SweepReport()
        self.continuous = dataset.outcome_kind == CONTINUOUS

        rows = np.asarray(rows, dtype=np.int64)
        self.rows_at = {}
        self.logm = {}
        self._ingest(tree, 0, rows)

    def _ingest(self, tree, k, rows):
        self.rows_at[k] = rows
        nd = tree.nodes[k]
        if nd.split:
            self.flag[k] = 1
            self.feat[k] = nd.feature
            self.thr[k] = nd.threshold
            left, right = kernels.split_rows(self.dataset.X, rows,
                                             nd.feature, nd.threshold)
            self._ingest(tree, 2 * k + 1, left)
            self._ingest(tree, 2 * k + 2, right)
        else:
            self.logm[k] = self._leaf_logm(rows)

    # ---- leaf marginals ----

    def _leaf_logm(self, rows):
        """Log marginal of one leaf's rows (0 when the likelihood is
        flattened for prior-recovery runs)."""
        if self.flatten:
            return 0.0
        y = self.dataset.y[rows]
        if self.continuous:
            n = rows.shape[0]
            mean = float(np.mean(y))
            sse = float(np.sum((y - mean) ** 2))
            if sse < self.sse_floor:
                sse = self.sse_floor
                self.report.sse_clamps += 1
            return -0.5 * math.log(n) + math.lgamma((n - 1) / 2.0) \
                - ((n - 1) / 2.0) * math.log(math.pi * sse)
        counts = np.bincount(y, minlength=self.dataset.n_categories)
        return likelihood.log_marginal_categorical(counts, 0)

    # ---- proposal helpers ----

    def _draw_covariate(self, rng):
        c = int(np.searchsorted(self.xi_cum, rng.random(), side="right"))
        return min(c, self.dataset.m - 1)

    def _grid_range(self, rows, c):
        xs = np.sort(self.dataset.X[rows, c])
        return likelihood.valid_grid_range(xs, self.dataset.thresholds[c], self.q)

    def _log_grid_size(self, rows, c):
        lo, hi = self._grid_range(rows, c)
        return math.log(hi - lo) if hi > lo else -math.inf

    def _is_twig(self, k):
        return self.flag[k] == 1 and self.flag[2 * k + 1] == 0 \
            and self.flag[2 * k + 2] == 0

    def _root_only(self):
        return self.flag[0] == 0

    # ---- move log-ratios ----

    def grow_log_ratio(self, k, c, t):
        """Log MH ratio for splitting leaf k at (c, t), plus the pieces
        needed to apply the move.  Assumes (c, t) came from the valid grid."""
        rows = self.rows_at[k]
        left, right = kernels.split_rows(self.dataset.X, rows, c, t)
        logm_l = self._leaf_logm(left)
        logm_r = self._leaf_logm(right)
        lik = logm_l + logm_r - self.logm[k]
        lp_k = -node_depth(k) / self.delta
        lp_child = -node_depth(2 * k + 1) / self.delta
        struct = lp_k + 2.0 * math.log1p(-math.exp(lp_child))
        if k > 0:
            struct -= math.log1p(-math.exp(lp_k))
        # k == 0: the root-only state carries no leaf factor at the root
        return lik + struct, left, right, logm_l, logm_r

    def prune_log_ratio(self, k):
        """Log MH ratio for merging interior node k's two leaf children."""
        logm_m = self._leaf_logm(self.rows_at[k])
        left, right = 2 * k + 1, 2 * k + 2
        lik = logm_m - self.logm[left] - self.logm[right]
        lp_k = -node_depth(k) / self.delta
        lp_child = -node_depth(left) / self.delta
        struct = -lp_k - 2.0 * math.log1p(-math.exp(lp_child))
        if k > 0:
            struct += math.log1p(-math.exp(lp_k))
        return lik + struct, logm_m

    def _eval_subtree(self, k, c_new, t_new):
        """Re-route node k's rows through the existing subtree with (c_new,
        t_new) at k.  Returns None if any leaf would fall under q rows, else
        (new_rows, new_logm, sum of log grid sizes over descendants)."""
        new_rows = {}
        new_logm = {}
        log_g = 0.0
        stack = [k]
        while stack:
            j = stack.pop()
            rows_j = new_rows[j] if j != k else self.rows_at[k]
            if self.flag[j] == 1:
                c_j = c_new if j == k else self.feat[j]
                t_j = t_new if j == k else self.thr[j]
                left, right = kernels.split_rows(self.dataset.X, rows_j, c_j, t_j)
                new_rows[2 * j + 1] = left
                new_rows[2 * j + 2] = right
                if j != k:
                    g = self._log_grid_size(rows_j, self.feat[j])
                    if not math.isfinite(g):
                        return None
                    log_g += g
                stack.append(2 * j + 2)
                stack.append(2 * j + 1)
            else:
                if rows_j.shape[0] < self.q:
                    return None
                new_logm[j] = self._leaf_logm(rows_j)
        return new_rows, new_logm, log_g

    def _subtree_leaves(self, k):
        out = []
        stack = [k]
        while stack:
            j = stack.pop()
            if self.flag[j] == 1:
                stack.append(2 * j + 2)
                stack.append(2 * j + 1)
            else:
                out.append(j)
        return out

    def _subtree_interior_below(self, k):
        out = []
        stack = [k]
        while stack:
            j = stack.pop()
            if self.flag[j] == 1:
                if j != k:
                    out.append(j)
                stack.append(2 * j + 2)
                stack.append(2 * j + 1)
        return out

    def change_log_ratio(self, k, c_new, t_new):
        """Log MH ratio for replacing node k's split rule, or None when the
        proposal strands a downstream leaf under q rows."""
        result = self._eval_subtree(k, c_new, t_new)
        if result is None:
            return None
        new_rows, new_logm, log_g_new = result
        lik_new = sum(new_logm.values())
        lik_old = sum(self.logm[j] for j in self._subtree_leaves(k))
        log_g_old = 0.0
        for j in self._subtree_interior_below(k):
            log_g_old += self._log_grid_size(self.rows_at[j], self.feat[j])
        ratio = (lik_new - lik_old) + (log_g_old - log_g_new)
        return ratio, new_rows, new_logm

    # ---- move attempts (propose, accept/reject, mutate) ----

    def try_grow(self, k, rng):
        rows = self.rows_at[k]
        if node_depth(k) >= self.depth_cap or rows.shape[0] < 2 * self.q:
            return False
        c = self._draw_covariate(rng)
        lo, hi = self._grid_range(rows, c)
        self.report.grow_proposed += 1
        if hi <= lo:
            self.report.degenerate_rejections += 1
            return False
        t = float(self.dataset.thresholds[c][lo + int(rng.integers(hi - lo))])
        log_ratio, left, right, logm_l, logm_r = self.grow_log_ratio(k, c, t)
        if math.log(rng.random()) < log_ratio:
            self.report.grow_accepted += 1
            self.flag[k] = 1
            self.feat[k] = c
            self.thr[k] = t
            lk, rk = 2 * k + 1, 2 * k + 2
            self.rows_at[lk], self.rows_at[rk] = left, right
            self.logm[lk], self.logm[rk] = logm_l, logm_r
            del self.logm[k]
            return True
        return False

    def try_prune(self, k, rng):
        self.report.prune_proposed += 1
        log_ratio, logm_m = self.prune_log_ratio(k)
        if math.log(rng.random()) < log_ratio:
            self.report.prune_accepted += 1
            lk, rk = 2 * k + 1, 2 * k + 2
            self.flag[k] = 0
            del self.rows_at[lk], self.rows_at[rk]
            del self.logm[lk], self.logm[rk]
            self.logm[k] = logm_m
            return True
        return False

    def try_change(self, k, rng, threshold_only):
        rows = self.rows_at[k]
        c_new = self.feat[k] if threshold_only else self._draw_covariate(rng)
        lo, hi = self._grid_range(rows, c_new)
        if threshold_only:
            self.report.threshold_proposed += 1
        else:
            self.report.covariate_proposed += 1
        if hi <= lo:
            self.report.degenerate_rejections += 1
            return False
        t_new = float(self.dataset.thresholds[c_new][lo + int(rng.integers(hi - lo))])
        result = self.change_log_ratio(k, int(c_new), t_new)
        if result is None:
            self.report.degenerate_rejections += 1
            return False
        log_ratio, new_rows, new_logm = result
        if math.log(rng.random()) < log_ratio:
            if threshold_only:
                self.report.threshold_accepted += 1
            else:
                self.report.covariate_accepted += 1
            self.feat[k] = c_new
            self.thr[k] = t_new
            self.rows_at.update(new_rows)
            for j in self._subtree_leaves(k):
                self.logm[j] = new_logm[j]
            return True
        return False

    def sweep(self, rng):
        """One full pass over the current nodes in ascending index order."""
        pending = sorted(self.rows_at)
        i = 0
        while i < len(pending):
            k = pending[i]
            if k not in self.rows_at:
                i += 1
                continue
            if self.flag[k] == 0:
                if self.try_grow(k, rng):
                    insort(pending, 2 * k + 1)
                    insort(pending, 2 * k + 2)
            elif self._is_twig(k):
                self.try_prune(k, rng)
            if self.flag[k] == 1:
                self.try_change(k, rng, threshold_only=False)
            if self.flag[k] == 1:
                self.try_change(k, rng, threshold_only=True)
            i += 1

    def export(self):
        """Rebuild an (unparameterized) Tree from the packed arrays."""
        nodes = {}
        for k in self.rows_at:
            if self.flag[k] == 1:
                nodes[k] = Node(True, int(self.feat[k]), float(self.thr[k]))
            else:
                nodes[k] = Node()
        return Tree(nodes)


def _make_state(tree, dataset, rows, delta, xi, q, depth_cap, flatten):
    sse_floor = likelihood.sse_floor_for(dataset)
    return _SweepState(tree, dataset, rows, delta, xi, q, depth_cap,
                       sse_floor, flatten)


def sweep_tree(tree, dataset, rows, delta, xi, q, rng,
               depth_cap=DEFAULT_DEPTH_CAP, sweeps=1,
               flatten_likelihood=False):
    """Run `sweeps` full node sweeps and return (new tree, report).

    Every accepted state keeps at least q rows in each leaf.  The input tree
    must already satisfy that on `rows` (use a root-only tree otherwise).
    """
    state = _make_state(tree, dataset, rows, delta, xi, q, depth_cap,
                        flatten_likelihood)
    for _ in range(sweeps):
        state.sweep(rng)
    return state.export(), state.report


def update_split_flag(tree, dataset, rows, k, delta, xi, q, rng,
                      depth_cap=DEFAULT_DEPTH_CAP, flatten_likelihood=False):
    """Single grow/prune attempt at node k; returns (tree', accepted)."""
    state = _make_state(tree, dataset, rows, delta, xi, q, depth_cap,
                        flatten_likelihood)
    if state.flag[k] == 0:
        accepted = state.try_grow(k, rng)
    elif state._is_twig(k):
        accepted = state.try_prune(k, rng)
    else:
        accepted = False
    return state.export(), accepted


def update_covariate(tree, dataset, rows, k, delta, xi, q, rng,
                     depth_cap=DEFAULT_DEPTH_CAP, flatten_likelihood=False):
    """Single covariate-change attempt at interior node k."""
    state = _make_state(tree, dataset, rows, delta, xi, q, depth_cap,
                        flatten_likelihood)
    accepted = state.try_change(k, rng, threshold_only=False)
    return state.export(), accepted


def update_threshold(tree, dataset, rows, k, delta, xi, q, rng,
                     depth_cap=DEFAULT_DEPTH_CAP, flatten_likelihood=False):
    """Single threshold-change attempt at interior node k."""
    state = _make_state(tree, dataset, rows, delta, xi, q, depth_cap,
                        flatten_likelihood)
    accepted = state.try_change(k, rng, threshold_only=True)
    return state.export(), accepted


def grow_log_ratio(tree, dataset, rows, k, c, t, delta, xi, q,
                   depth_cap=DEFAULT_DEPTH_CAP):
    """Log MH acceptance ratio of growing leaf k at (c, t) (no mutation)."""
    state = _make_state(tree, dataset, rows, delta, xi, q, depth_cap, False)
    return state.grow_log_ratio(k, c, t)[0]


def prune_log_ratio(tree, dataset, rows, k, delta, xi, q,
                    depth_cap=DEFAULT_DEPTH_CAP):
    """Log MH acceptance ratio of pruning twig k (no mutation)."""
    state = _make_state(tree, dataset, rows, delta, xi, q, depth_cap, False)
    return state.prune_log_ratio(k)[0]


def update_xi(tree, n_covariates, rng):
    """Conjugate covariate-choice update: Dirichlet(1 + usage counts)."""
    counts = np.ones(n_covariates)
    for k in tree.interior_nodes():
        counts[tree.nodes[k].feature] += 1.0
    return rng.dirichlet(counts)


def redraw_leaf_params(tree, dataset, rows, rng, q, base,
                       sse_floor=None):
    """Replace every leaf's sampled parameters (and refresh its stats) from
    the rows currently routed to it.  Returns a new tree."""
    if sse_floor is None:
        sse_floor = likelihood.sse_floor_for(dataset)
    out = tree.copy()
    parts = leaf_partition(out, dataset, rows)
    for k, stats in parts.items():
        nd = out.nodes[k]
        nd.stats = stats
        nd.params = likelihood.draw_leaf_params(stats, rng, sse_floor, base)
    return out
