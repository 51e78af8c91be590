"""Probability computations: node/tree priors, marginalized leaf likelihoods,
conditional parameter draws and per-observation densities.

Leaf priors are objective: flat 1/sigma^2 on (mu, sigma^2) for continuous
outcomes and Dirichlet(1/2, ..., 1/2) for categorical ones.  Integrating the
leaf parameters out gives closed forms:

  continuous, n responses with mean ybar and S = sum (y - ybar)^2:
      m = n^(-1/2) * Gamma((n-1)/2) * (pi * S)^(-(n-1)/2)
  categorical, counts n_c over K classes, n total:
      m = Gamma(K/2)/Gamma(K/2 + n) * prod_c Gamma(1/2 + n_c)/Gamma(1/2)

The improper continuous prior's constant is fixed at 1 globally so that
acceptance ratios comparing trees with different leaf counts are well
defined and reproducible.  Leaves need at least q > 1 rows, which together
with the sse floor keeps every factor finite.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import CATEGORICAL, CONTINUOUS
from .errors import InvalidLeafError
from .tree import (CategoricalParams, CategoricalStats, GaussianParams,
                   GaussianStats, node_depth)

CAT_CONCENTRATION = 0.5

# Relative floor for a continuous leaf's sum of squares: leaves whose
# responses are all identical would otherwise make the marginal undefined.
SSE_FLOOR_REL = 1e-8


def sse_floor_for(dataset) -> float:
    """Absolute sse floor: 1e-8 x global outcome variance (with a fallback
    for degenerate constant-outcome data)."""
    if dataset.outcome_kind != CONTINUOUS:
        return 0.0
    v = dataset.outcome_variance()
    return SSE_FLOOR_REL * v if v > 0.0 else SSE_FLOOR_REL


@dataclass
class LeafPriorConfig:
    """Objective leaf-prior settings; q is the minimum rows per leaf."""
    q: int = 5
    concentration: float = CAT_CONCENTRATION

    def __post_init__(self):
        if self.q <= 1:
            raise ValueError("q must exceed 1")


@dataclass
class SurrogateBase:
    """Proper stand-in base distribution for clusters that do not yet hold
    enough data to use the objective posterior (new-cluster candidates and
    leaves with fewer than two rows)."""
    outcome_kind: str
    mean: float = 0.0
    variance: float = 1.0
    n_categories: int = 0

    @classmethod
    def from_dataset(cls, dataset):
        if dataset.outcome_kind == CONTINUOUS:
            v = dataset.outcome_variance()
            return cls(CONTINUOUS, float(dataset.y.mean()), v if v > 0 else 1.0)
        return cls(CATEGORICAL, n_categories=dataset.n_categories)

    def draw(self, rng):
        """Sample leaf parameters: mu ~ N(mean, variance) with sigma^2 fixed
        at the global variance, or p ~ Dirichlet(1/2 * 1_K)."""
        if self.outcome_kind == CONTINUOUS:
            return GaussianParams(float(rng.normal(self.mean, math.sqrt(self.variance))),
                                  self.variance)
        return CategoricalParams(rng.dirichlet(np.full(self.n_categories,
                                                       CAT_CONCENTRATION)))


def split_prior(k, delta) -> float:
    """Prior probability that node k splits: exp(-depth(k)/delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return math.exp(-node_depth(k) / delta)


def log_marginal_gaussian(n, sse, q, sse_floor=0.0) -> float:
    """Closed-form log marginal of n responses under the flat 1/sigma^2 prior."""
    if n < q or n < 2:
        raise InvalidLeafError(f"leaf with {n} rows (minimum {max(q, 2)})")
    s = max(sse, sse_floor)
    if s <= 0.0:
        raise InvalidLeafError("leaf with zero sum of squares and no floor")
    return -0.5 * math.log(n) + math.lgamma((n - 1) / 2.0) \
        - ((n - 1) / 2.0) * math.log(math.pi * s)


def log_marginal_categorical(counts, q) -> float:
    """Closed-form log marginal of category counts under Dirichlet(1/2)."""
    counts = np.asarray(counts)
    n = int(counts.sum())
    if n < q:
        raise InvalidLeafError(f"leaf with {n} rows (minimum {q})")
    k = counts.shape[0]
    return math.lgamma(k / 2.0) - math.lgamma(k / 2.0 + n) + float(
        sum(math.lgamma(CAT_CONCENTRATION + int(c)) - math.lgamma(CAT_CONCENTRATION)
            for c in counts))


def log_marginal_leaf(stats, q, sse_floor=0.0) -> float:
    """Dispatch on the stats type."""
    if isinstance(stats, GaussianStats):
        return log_marginal_gaussian(stats.n, stats.sse, q, sse_floor)
    return log_marginal_categorical(stats.counts, q)


def log_marginal_tree(tree, dataset, rows=None, q=2, sse_floor=None) -> float:
    """Sum of leaf log marginals over the tree's routed partition."""
    from .tree import leaf_partition
    if sse_floor is None:
        sse_floor = sse_floor_for(dataset)
    parts = leaf_partition(tree, dataset, rows)
    return sum(log_marginal_leaf(s, q, sse_floor) for s in parts.values())


def draw_leaf_params(stats, rng, sse_floor=0.0, base=None):
    """Posterior draw of leaf parameters given sufficient statistics.

    Continuous: sigma^2 ~ InvGamma((n-1)/2, sse/2), then
    mu | sigma^2 ~ N(mean, sigma^2/n).  Leaves with fewer than two rows fall
    back to the surrogate base.  Categorical: p ~ Dirichlet(1/2 + counts).
    """
    if isinstance(stats, CategoricalStats):
        return CategoricalParams(rng.dirichlet(CAT_CONCENTRATION + stats.counts))
    if stats.n < 2:
        if base is None:
            raise InvalidLeafError(f"leaf with {stats.n} rows needs a surrogate base")
        return base.draw(rng)
    s = max(stats.sse, sse_floor)
    if s <= 0.0:
        raise InvalidLeafError("leaf with zero sum of squares and no floor")
    sigma2 = (s / 2.0) / rng.gamma((stats.n - 1) / 2.0, 1.0)
    mu = rng.normal(stats.mean, math.sqrt(sigma2 / stats.n))
    return GaussianParams(float(mu), float(sigma2))


def log_obs_density(y, x, tree) -> float:
    """Log density of one observation under the tree's sampled leaf parameters."""
    nd = tree.nodes[tree.route(x)]
    if nd.params is None:
        raise ValueError("leaf has no sampled parameters")
    if isinstance(nd.params, GaussianParams):
        v = nd.params.sigma2
        return -0.5 * math.log(2.0 * math.pi * v) - (y - nd.params.mu) ** 2 / (2.0 * v)
    return math.log(nd.params.p[int(y)])


def log_obs_density_rows(tree, dataset) -> np.ndarray:
    """Vectorized `log_obs_density` over all rows of a dataset."""
    flag, feat, thr = tree.pack()
    if dataset.outcome_kind == CONTINUOUS:
        mu, sig2 = tree.pack_gaussian_params()
        return kernels.obs_logdens_cont(flag, feat, thr, mu, sig2,
                                        dataset.X, dataset.y)
    logp = tree.pack_categorical_logp(dataset.n_categories)
    return kernels.obs_logdens_cat(flag, feat, thr, logp, dataset.X, dataset.y)


def logdens_matrix(trees, X, y, outcome_kind, n_categories=0) -> np.ndarray:
    """(n, J) matrix of per-observation log densities under each tree."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], len(trees)))
    for j, tree in enumerate(trees):
        flag, feat, thr = tree.pack()
        if outcome_kind == CONTINUOUS:
            mu, sig2 = tree.pack_gaussian_params()
            out[:, j] = kernels.obs_logdens_cont(flag, feat, thr, mu, sig2,
                                                 X, np.asarray(y, dtype=np.float64))
        else:
            logp = tree.pack_categorical_logp(n_categories)
            out[:, j] = kernels.obs_logdens_cat(flag, feat, thr, logp, X,
                                                np.asarray(y, dtype=np.int64))
    return out


def valid_grid_range(x_sorted, grid, q):
    """Half-open grid index range [lo, hi) of thresholds that put at least q
    rows on each side of a split of the given sorted node values."""
    n = x_sorted.shape[0]
    if n < 2 * q or grid.shape[0] == 0:
        return 0, 0
    lo = int(np.searchsorted(grid, x_sorted[q - 1], side="right"))
    hi = int(np.searchsorted(grid, x_sorted[n - q], side="right"))
    return (lo, hi) if hi > lo else (0, 0)


def grid_size_at_node(dataset, rows, c, q) -> int:
    """Number of valid thresholds for covariate c among the given rows."""
    lo, hi = valid_grid_range(np.sort(dataset.X[rows, c]), dataset.thresholds[c], q)
    return hi - lo


def log_tree_structure_prior(tree, dataset, rows, delta, xi, q) -> float:
    """Log prior of the tree's structure (split flags, covariate choices and
    thresholds), with thresholds uniform over node-local valid grids.

    A root-only tree contributes 0 (the root's would-be leaf factor
    log(1 - split_prior(0)) is replaced by 0, since the root splits with
    prior probability one inside the splitting frame).
    """
    interior = tree.interior_nodes()
    if not interior:
        return 0.0
    rows = np.arange(dataset.n, dtype=np.int64) if rows is None \
        else np.asarray(rows, dtype=np.int64)
    rows_at = {0: rows}
    total = 0.0
    for k in interior:
        nd = tree.nodes[k]
        rk = rows_at[k]
        left, right = kernels.split_rows(dataset.X, rk, nd.feature, nd.threshold)
        rows_at[2 * k + 1] = left
        rows_at[2 * k + 2] = right
        g = grid_size_at_node(dataset, rk, nd.feature, q)
        if g <= 0:
            return -math.inf
        total += math.log(split_prior(k, delta)) + math.log(xi[nd.feature]) \
            - math.log(g)
    for k in tree.leaves():
        total += math.log1p(-split_prior(k, delta))
    return total
