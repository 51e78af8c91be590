"""Clustering updates for the infinite mixture of trees.

Stick-breaking weights w_j = v_j * prod_{k<j} (1 - v_k) are refreshed from
their Beta full conditionals, per-observation slice variables u_i ~
U(0, w_{Z_i}) truncate the infinite mixture to a finite candidate set, and
assignments are drawn with probability proportional to
1(w_j > u_i) * [y_i | tree_j].  Sticks are extended (each with a fresh
root-only candidate tree drawn from the surrogate base) until the residual
stick mass drops below min_i u_i, so the candidate set is complete.  Empty
clusters are removed afterwards with index compaction; cluster labels are
therefore transient and all reporting is content-based.
"""

import numpy as np

from .likelihood import (SurrogateBase, draw_leaf_params, logdens_matrix,
                         sse_floor_for)
from .tree import Tree, leaf_partition


class MixtureState:
    """Sticks, weights, slice variables, assignments and per-cluster trees."""

    def __init__(self, v, u, z, trees, xi, alpha):
        self.v = list(v)
        self.w = stick_weights(self.v)
        self.u = np.asarray(u, dtype=np.float64)
        self.z = np.asarray(z, dtype=np.int64)
        self.trees = list(trees)
        self.xi = list(xi)
        self.alpha = float(alpha)

    @property
    def n_clusters(self):
        return len(self.trees)

    def occupied_counts(self):
        return np.bincount(self.z, minlength=self.n_clusters)

    def rows_of(self, j):
        return np.nonzero(self.z == j)[0].astype(np.int64)

    def check_invariants(self, tol=1e-12):
        w = stick_weights(self.v)
        if np.max(np.abs(w - self.w)) > tol:
            raise AssertionError("weights inconsistent with sticks")
        if not np.all((self.u > 0) & (self.u < self.w[self.z])):
            raise AssertionError("slice variables out of range")
        if self.z.max(initial=0) >= self.n_clusters:
            raise AssertionError("assignment beyond instantiated clusters")
        if len(self.xi) != len(self.trees) or len(self.v) != len(self.trees):
            raise AssertionError("parallel cluster lists out of sync")


def stick_weights(v):
    """w_j = v_j * prod_{k<j} (1 - v_k)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty(v.shape[0])
    rem = 1.0
    for j in range(v.shape[0]):
        out[j] = v[j] * rem
        rem *= 1.0 - v[j]
    return out


def residual_mass(v):
    """Stick mass left after the instantiated sticks: prod (1 - v_j)."""
    out = 1.0
    for vj in v:
        out *= 1.0 - vj
    return out


def _positive_uniform(rng, n):
    """Uniform draws on (0, 1]; inverting keeps slice variables strictly
    positive so the stick-extension loop always terminates."""
    return 1.0 - rng.random(n)


def init_state(dataset, alpha, q, rng, base=None) -> MixtureState:
    """Single cluster holding every observation, with a root-only tree."""
    if base is None:
        base = SurrogateBase.from_dataset(dataset)
    n = dataset.n
    tree = Tree.root_only()
    parts = leaf_partition(tree, dataset, np.arange(n, dtype=np.int64))
    floor = sse_floor_for(dataset)
    for k, stats in parts.items():
        tree.nodes[k].stats = stats
        tree.nodes[k].params = draw_leaf_params(stats, rng, floor, base)
    xi = rng.dirichlet(np.ones(dataset.m))
    v = [rng.beta(1.0 + n, alpha)]
    state = MixtureState(v, np.empty(n), np.zeros(n, dtype=np.int64),
                         [tree], [xi], alpha)
    state.u = state.w[state.z] * _positive_uniform(rng, n)
    return state


def update_sticks(state: MixtureState, rng) -> None:
    """v_j ~ Beta(1 + #{Z=j}, alpha + #{Z>j}) for every instantiated stick."""
    counts = state.occupied_counts()
    above = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0]])
    for j in range(state.n_clusters):
        state.v[j] = float(rng.beta(1.0 + counts[j], state.alpha + above[j]))
    state.w = stick_weights(state.v)


def instantiate_prior_tree(dataset, base, rng) -> Tree:
    """Root-only candidate tree with leaf parameters from the surrogate base."""
    tree = Tree.root_only(params=base.draw(rng))
    return tree


def update_slices(state: MixtureState, dataset, base, rng) -> None:
    """Redraw u_i ~ U(0, w_{Z_i}), then extend the stick list (each new stick
    carrying a fresh prior candidate tree) until the residual mass is below
    min_i u_i, which guarantees every candidate cluster is instantiated."""
    state.u = state.w[state.z] * _positive_uniform(rng, dataset.n)
    u_min = float(state.u.min())
    rem = residual_mass(state.v)
    while rem >= u_min:
        vj = float(rng.beta(1.0, state.alpha))
        state.v.append(vj)
        state.trees.append(instantiate_prior_tree(dataset, base, rng))
        state.xi.append(rng.dirichlet(np.ones(dataset.m)))
        rem *= 1.0 - vj
    state.w = stick_weights(state.v)


def update_assignments(state: MixtureState, dataset, rng,
                       flatten_likelihood=False) -> np.ndarray:
    """Draw Z_i over the candidate set {j : w_j > u_i}, then drop empty
    clusters (compacting v, w, trees, xi and remapping Z).

    Returns the per-observation log density under the newly assigned tree,
    which doubles as the conditional log-likelihood term of the iteration.
    """
    n = dataset.n
    if flatten_likelihood:
        logdens = np.zeros((n, state.n_clusters))
    else:
        logdens = logdens_matrix(state.trees, dataset.X, dataset.y,
                                 dataset.outcome_kind, dataset.n_categories)
    mask = state.w[None, :] > state.u[:, None]
    if not mask.any(axis=1).all():
        bad = int(np.nonzero(~mask.any(axis=1))[0][0])
        raise RuntimeError(
            f"no candidate cluster for observation {bad}: u={state.u[bad]}, "
            f"w={state.w.tolist()} (slice extension invariant violated)")
    scores = np.where(mask, logdens, -np.inf)
    mx = scores.max(axis=1)
    p = np.exp(scores - mx[:, None])
    p[~mask] = 0.0
    totals = p.sum(axis=1)
    r = rng.random(n) * totals
    z = np.minimum((np.cumsum(p, axis=1) < r[:, None]).sum(axis=1),
                   state.n_clusters - 1).astype(np.int64)
    cond = logdens[np.arange(n), z]

    occupied = np.unique(z)
    if occupied.shape[0] < state.n_clusters:
        remap = -np.ones(state.n_clusters, dtype=np.int64)
        remap[occupied] = np.arange(occupied.shape[0])
        z = remap[z]
        state.v = [state.v[j] for j in occupied]
        state.trees = [state.trees[j] for j in occupied]
        state.xi = [state.xi[j] for j in occupied]
        state.w = stick_weights(state.v)
    state.z = z
    return cond


def joint_loglik(state: MixtureState, cond: np.ndarray) -> float:
    """Joint tree-assignment likelihood: sum_i log[y_i | T_{Z_i}] + log w_{Z_i}."""
    return float(cond.sum() + np.log(state.w[state.z]).sum())
