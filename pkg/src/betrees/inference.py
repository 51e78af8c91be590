"""Chain orchestration, best-ensemble selection, prediction and metrics.

Each chain iteration alternates two blocks: a tree-growing phase (per-cluster
node sweeps on the cluster's assigned rows, covariate-choice update and leaf
parameter redraw) and a clustering phase (sticks, slices, assignments).  The
retained iteration maximizing the joint tree-assignment likelihood
sum_i log[y_i | T_{Z_i}] + log w_{Z_i} becomes the best ensemble snapshot
used for prediction and reporting.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats as sps

from . import kernels, mixture, tree_sampler
from .dataset import CATEGORICAL, CONTINUOUS
from .errors import ConfigError
from .likelihood import SurrogateBase, logdens_matrix, sse_floor_for
from .seeding import STREAM_INIT, STREAM_MIXTURE, STREAM_SWEEP, substream
from .tree import DEFAULT_DEPTH_CAP, Tree, leaf_partition


@dataclass
class ChainConfig:
    """Hyperparameters and chain settings for one fit."""
    iterations: int = 10000
    burn_in: int = 5000
    thinning: int = 1
    seed: int = 1
    delta: float = 1.0
    alpha: float = 1.0
    q: int = 5
    depth_cap: int = DEFAULT_DEPTH_CAP
    sweeps_per_iteration: int = 1
    threads: int = 1
    single_cluster: bool = False
    flatten_likelihood: bool = False
    record_assignments: bool = False

    def validate(self):
        if self.iterations <= 0 or self.burn_in < 0:
            raise ConfigError("iterations must be positive and burn-in non-negative")
        if self.burn_in >= self.iterations:
            raise ConfigError(f"burn-in ({self.burn_in}) must be smaller than "
                              f"iterations ({self.iterations})")
        if self.thinning < 1 or self.sweeps_per_iteration < 1 or self.threads < 1:
            raise ConfigError("thinning, sweeps and threads must be >= 1")
        if self.q <= 1:
            raise ConfigError("q must exceed 1")
        if self.delta <= 0 or self.alpha <= 0:
            raise ConfigError("delta and alpha must be positive")
        if self.depth_cap < 1:
            raise ConfigError("depth cap must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


class EnsembleSnapshot:
    """Frozen best-scoring chain state: trees, weights, assignments, score."""

    def __init__(self, iteration, score, cond_loglik, weights, trees, xi, z,
                 outcome_kind, n_categories, column_names):
        self.iteration = int(iteration)
        self.score = float(score)
        self.cond_loglik = float(cond_loglik)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.trees = list(trees)
        self.xi = [np.asarray(x, dtype=np.float64) for x in xi]
        self.z = np.asarray(z, dtype=np.int64)
        self.outcome_kind = outcome_kind
        self.n_categories = int(n_categories)
        self.column_names = tuple(column_names)

    @property
    def n_clusters(self):
        return len(self.trees)

    def recompute_score(self, dataset) -> float:
        """Re-derive the stored score from the frozen state (invariant check)."""
        logdens = logdens_matrix(self.trees, dataset.X, dataset.y,
                                 self.outcome_kind, self.n_categories)
        idx = np.arange(dataset.n)
        return float(logdens[idx, self.z].sum()
                     + np.log(self.weights[self.z]).sum())

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "score": self.score,
            "cond_loglik": self.cond_loglik,
            "weights": [float(w) for w in self.weights],
            "outcome_kind": self.outcome_kind,
            "n_categories": self.n_categories,
            "column_names": list(self.column_names),
            "xi": [[float(v) for v in x] for x in self.xi],
            "z": [int(v) for v in self.z],
            "trees": [t.to_dict(self.outcome_kind) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        trees = [Tree.from_dict(td, d["outcome_kind"]) for td in d["trees"]]
        return cls(d["iteration"], d["score"], d["cond_loglik"], d["weights"],
                   trees, d["xi"], d["z"], d["outcome_kind"],
                   d["n_categories"], d["column_names"])

    def save(self, path):
        import json
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        import json
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PosteriorSummaries:
    """Aggregates over the retained (post-burn-in, thinned) iterations."""
    n_retained: int = 0
    cluster_count_hist: dict = field(default_factory=dict)
    modal_cluster_count: int = 0
    mean_joint_loglik: float = 0.0
    mean_cond_loglik: float = 0.0
    mean_xi_bar: np.ndarray = None
    tree_resets: int = 0
    sse_clamps: int = 0
    runtime_s: float = 0.0


@dataclass
class ChainResult:
    trace: pd.DataFrame
    best: EnsembleSnapshot
    summaries: PosteriorSummaries
    assignment_trace: np.ndarray = None


def _tree_valid_on_rows(tree, dataset, rows, q) -> bool:
    """True when every leaf of the tree receives at least q of `rows`."""
    if not tree.interior_nodes():
        return True
    flag, feat, thr = tree.pack()
    leaf_idx = kernels.route_rows(flag, feat, thr, dataset.X,
                                  np.asarray(rows, dtype=np.int64))
    counts = np.bincount(leaf_idx, minlength=len(flag))
    return all(counts[k] >= q for k in tree.leaves())


def _snapshot_stats(trees, state, dataset):
    """Deep-copied trees with leaf stats refreshed from the current
    assignment (sampled parameters are kept as-is)."""
    out = []
    for j, tree in enumerate(trees):
        t = tree.copy()
        parts = leaf_partition(t, dataset, state.rows_of(j))
        for k, stats in parts.items():
            t.nodes[k].stats = stats
        out.append(t)
    return out


def run_chain(dataset, config: ChainConfig) -> ChainResult:
    """Run the blocked Gibbs sampler and return trace, best snapshot and
    posterior summaries.  Deterministic under the config seed, including
    with threads > 1."""
    config.validate()
    if dataset.n < 2 * config.q:
        raise ConfigError(f"dataset has {dataset.n} rows; needs at least "
                          f"2*q = {2 * config.q}")
    t_start = time.perf_counter()
    base = SurrogateBase.from_dataset(dataset)
    sse_floor = sse_floor_for(dataset)
    rng_init = substream(config.seed, STREAM_INIT)
    state = mixture.init_state(dataset, config.alpha, config.q, rng_init, base)

    pool = ThreadPoolExecutor(max_workers=config.threads) \
        if config.threads > 1 else None
    trace_rows = []
    best = None
    xi_names = [f"xi_bar_{c}" for c in dataset.column_names]
    assignment_trace = [] if config.record_assignments else None
    tree_resets = 0
    sse_clamps = 0

    def sweep_cluster(it, j):
        rows_j = state.rows_of(j)
        tree = state.trees[j]
        rng_j = substream(config.seed, STREAM_SWEEP, it, j)
        resets = 0
        if rows_j.shape[0] < 2 * config.q:
            if tree.interior_nodes():
                tree = Tree.root_only()
                resets = 1
            report = tree_sampler.SweepReport()
        else:
            if not _tree_valid_on_rows(tree, dataset, rows_j, config.q):
                tree = Tree.root_only()
                resets = 1
            tree, report = tree_sampler.sweep_tree(
                tree, dataset, rows_j, config.delta, state.xi[j], config.q,
                rng_j, depth_cap=config.depth_cap,
                sweeps=config.sweeps_per_iteration,
                flatten_likelihood=config.flatten_likelihood)
        xi_j = tree_sampler.update_xi(tree, dataset.m, rng_j)
        tree = tree_sampler.redraw_leaf_params(tree, dataset, rows_j, rng_j,
                                               config.q, base, sse_floor)
        return j, tree, xi_j, report, resets

    try:
        for it in range(1, config.iterations + 1):
            # tree-growing phase
            n_clusters = state.n_clusters
            if pool is not None and n_clusters > 1:
                results = list(pool.map(lambda j: sweep_cluster(it, j),
                                        range(n_clusters)))
            else:
                results = [sweep_cluster(it, j) for j in range(n_clusters)]
            report = tree_sampler.SweepReport()
            resets_now = 0
            for j, tree, xi_j, rep, resets in results:
                state.trees[j] = tree
                state.xi[j] = xi_j
                report.merge(rep)
                resets_now += resets
            tree_resets += resets_now
            sse_clamps += report.sse_clamps

            # clustering phase
            rng_mix = substream(config.seed, STREAM_MIXTURE, it)
            if config.single_cluster:
                mixture.update_sticks(state, rng_mix)
                state.u = state.w[state.z] * (1.0 - rng_mix.random(dataset.n))
                cond = logdens_matrix(state.trees, dataset.X, dataset.y,
                                      dataset.outcome_kind,
                                      dataset.n_categories)[:, 0]
                n_instantiated = 1
            else:
                mixture.update_sticks(state, rng_mix)
                mixture.update_slices(state, dataset, base, rng_mix)
                n_instantiated = state.n_clusters
                cond = mixture.update_assignments(
                    state, dataset, rng_mix,
                    flatten_likelihood=config.flatten_likelihood)

            joint = mixture.joint_loglik(state, cond)
            cond_total = float(cond.sum())
            retained = it > config.burn_in and \
                (it - config.burn_in - 1) % config.thinning == 0
            w_occ = state.w / state.w.sum()
            xi_bar = np.zeros(dataset.m)
            for j in range(state.n_clusters):
                xi_bar += w_occ[j] * state.xi[j]

            row = {"iteration": it, "retained": int(retained),
                   "joint_loglik": joint, "cond_loglik": cond_total,
                   "n_clusters": state.n_clusters,
                   "n_instantiated": n_instantiated,
                   "weights": ";".join(repr(float(w)) for w in state.w)}
            for name, val in zip(xi_names, xi_bar):
                row[name] = val
            row.update(report.as_dict())
            row["tree_resets"] = resets_now
            trace_rows.append(row)

            if retained:
                if assignment_trace is not None:
                    assignment_trace.append(state.z.astype(np.int32))
                if best is None or joint > best.score:
                    best = EnsembleSnapshot(
                        it, joint, cond_total, state.w.copy(),
                        _snapshot_stats(state.trees, state, dataset),
                        [x.copy() for x in state.xi], state.z.copy(),
                        dataset.outcome_kind, dataset.n_categories,
                        dataset.column_names)
    finally:
        if pool is not None:
            pool.shutdown()

    trace = pd.DataFrame(trace_rows)
    summaries = _summarize(trace, xi_names, tree_resets, sse_clamps,
                           time.perf_counter() - t_start)
    return ChainResult(trace, best, summaries,
                       None if assignment_trace is None
                       else np.asarray(assignment_trace))


def _summarize(trace, xi_names, tree_resets, sse_clamps, runtime_s):
    kept = trace[trace["retained"] == 1]
    hist_series = kept["n_clusters"].value_counts().sort_index()
    hist = {int(k): int(v) for k, v in hist_series.items()}
    modal = max(hist.items(), key=lambda kv: (kv[1], -kv[0]))[0] if hist else 0
    xi_bar = kept[xi_names].mean().to_numpy() if len(kept) else None
    if xi_bar is not None and xi_bar.sum() > 0:
        xi_bar = xi_bar / xi_bar.sum()
    return PosteriorSummaries(
        n_retained=int(len(kept)),
        cluster_count_hist=hist,
        modal_cluster_count=int(modal),
        mean_joint_loglik=float(kept["joint_loglik"].mean()) if len(kept) else 0.0,
        mean_cond_loglik=float(kept["cond_loglik"].mean()) if len(kept) else 0.0,
        mean_xi_bar=xi_bar,
        tree_resets=tree_resets,
        sse_clamps=sse_clamps,
        runtime_s=runtime_s,
    )


def select_best(snapshots) -> EnsembleSnapshot:
    """Highest-scoring snapshot; ties broken by earliest iteration."""
    if not snapshots:
        raise ValueError("no snapshots to select from")
    best = None
    for snap in sorted(snapshots, key=lambda s: s.iteration):
        if best is None or snap.score > best.score:
            best = snap
    return best


# ---- prediction ----

def _leaf_estimates(tree, outcome_kind, n_categories):
    """Point estimate per leaf: posterior mean of the leaf parameter."""
    est = {}
    for k in tree.leaves():
        nd = tree.nodes[k]
        if outcome_kind == CONTINUOUS:
            if nd.stats is not None and nd.stats.n > 0:
                est[k] = nd.stats.mean
            else:
                est[k] = nd.params.mu if nd.params is not None else 0.0
        else:
            counts = nd.stats.counts if nd.stats is not None \
                else np.zeros(n_categories)
            est[k] = (0.5 + counts) / (0.5 * n_categories + counts.sum())
    return est


def _route_matrix(tree, X):
    flag, feat, thr = tree.pack()
    rows = np.arange(X.shape[0], dtype=np.int64)
    return kernels.route_rows(flag, feat, thr,
                              np.ascontiguousarray(X, dtype=np.float64), rows)


def predict_cluster_specific(snapshot, X, z, level=0.95):
    """Estimates via the known cluster's tree.

    Continuous outcomes return (estimate, lower, upper) with the interval
    from the leaf's posterior predictive t distribution on n-1 degrees of
    freedom; categorical outcomes return an (n, K) matrix of posterior-mean
    class probabilities.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z = np.broadcast_to(np.asarray(z, dtype=np.int64), (X.shape[0],))
    if np.any((z < 0) | (z >= snapshot.n_clusters)):
        raise ValueError("cluster index out of range")
    if snapshot.outcome_kind == CATEGORICAL:
        probs = np.empty((X.shape[0], snapshot.n_categories))
        for j in np.unique(z):
            sel = z == j
            tree = snapshot.trees[j]
            est = _leaf_estimates(tree, CATEGORICAL, snapshot.n_categories)
            leaves = _route_matrix(tree, X[sel])
            probs[sel] = np.array([est[k] for k in leaves])
        return probs
    est = np.empty(X.shape[0])
    lo = np.full(X.shape[0], np.nan)
    hi = np.full(X.shape[0], np.nan)
    for j in np.unique(z):
        sel = np.nonzero(z == j)[0]
        tree = snapshot.trees[j]
        leaves = _route_matrix(tree, X[sel])
        for i, k in zip(sel, leaves):
            nd = tree.nodes[k]
            stats = nd.stats
            if stats is not None and stats.n > 0:
                est[i] = stats.mean
                if stats.n > 1:
                    s2 = max(stats.sse, 1e-300) / (stats.n - 1)
                    half = sps.t.ppf(0.5 + level / 2.0, stats.n - 1) * \
                        np.sqrt(s2 * (1.0 + 1.0 / stats.n))
                    lo[i], hi[i] = stats.mean - half, stats.mean + half
            else:
                est[i] = nd.params.mu if nd.params is not None else 0.0
    return est, lo, hi


def predict_ensemble(snapshot, X):
    """Weight-renormalized average of the cluster-specific estimates."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    w = snapshot.weights / snapshot.weights.sum()
    if snapshot.outcome_kind == CATEGORICAL:
        probs = np.zeros((X.shape[0], snapshot.n_categories))
        for j, tree in enumerate(snapshot.trees):
            est = _leaf_estimates(tree, CATEGORICAL, snapshot.n_categories)
            leaves = _route_matrix(tree, X)
            probs += w[j] * np.array([est[k] for k in leaves])
        return probs
    out = np.zeros(X.shape[0])
    for j, tree in enumerate(snapshot.trees):
        est = _leaf_estimates(tree, CONTINUOUS, 0)
        leaves = _route_matrix(tree, X)
        out += w[j] * np.array([est[k] for k in leaves])
    return out


def classify(probs, cutoff=0.5):
    """Class labels from probabilities: binary uses P(class 1) >= cutoff,
    multiclass uses the argmax."""
    probs = np.asarray(probs)
    if probs.ndim == 1:
        return (probs >= cutoff).astype(np.int64)
    if probs.shape[1] == 2:
        return (probs[:, 1] >= cutoff).astype(np.int64)
    return probs.argmax(axis=1).astype(np.int64)


def assign_subject_clusters(snapshot, X, y, subject_ids):
    """Most likely cluster per subject from its revealed entries:
    argmax_j sum_r (log[y_r | T_j] + log w_j)."""
    logdens = logdens_matrix(snapshot.trees, X, y, snapshot.outcome_kind,
                             snapshot.n_categories)
    logw = np.log(snapshot.weights / snapshot.weights.sum())
    scores = logdens + logw[None, :]
    out = {}
    subject_ids = np.asarray(subject_ids)
    for s in np.unique(subject_ids):
        out[int(s)] = int(scores[subject_ids == s].sum(axis=0).argmax())
    return out


def predict_subject_clustered(snapshot, dataset, reveal_rows):
    """Subject-clustered prediction: use each subject's revealed rows to pick
    its cluster, then predict the subject's remaining rows with the
    cluster-specific estimator.

    Returns (predicted_row_indices, estimates).
    """
    if dataset.subject_ids is None:
        raise ValueError("dataset has no subject ids")
    reveal_rows = np.asarray(reveal_rows, dtype=np.int64)
    z_by_subject = assign_subject_clusters(
        snapshot, dataset.X[reveal_rows], dataset.y[reveal_rows],
        dataset.subject_ids[reveal_rows])
    mask = np.ones(dataset.n, dtype=bool)
    mask[reveal_rows] = False
    target = np.nonzero(mask)[0]
    z = np.array([z_by_subject[int(s)] for s in dataset.subject_ids[target]],
                 dtype=np.int64)
    if dataset.outcome_kind == CATEGORICAL:
        return target, predict_cluster_specific(snapshot, dataset.X[target], z)
    est, _, _ = predict_cluster_specific(snapshot, dataset.X[target], z)
    return target, est


def variable_ranking(snapshot) -> np.ndarray:
    """Weighted covariate-choice probabilities of the snapshot ensemble."""
    w = snapshot.weights / snapshot.weights.sum()
    out = np.zeros(len(snapshot.column_names))
    for j, x in enumerate(snapshot.xi):
        out += w[j] * x
    return out


def variable_ranking_from_trace(trace, column_names) -> np.ndarray:
    """Mean of the per-iteration weighted covariate-choice probabilities
    over retained iterations."""
    kept = trace[trace["retained"] == 1]
    if not len(kept):
        raise ValueError("trace has no retained iterations")
    cols = [f"xi_bar_{c}" for c in column_names]
    out = kept[cols].mean().to_numpy()
    return out / out.sum()


# ---- metrics ----

def evaluate(predictions, truth, kind) -> dict:
    """Classification: misclassification rate at the 0.5 cut-off.
    Regression: root mean squared error and mean absolute deviation."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    n_pred = predictions.shape[0]
    if n_pred == 0 or truth.shape[0] == 0:
        raise ValueError("empty input")
    if n_pred != truth.shape[0]:
        raise ValueError(f"length mismatch: {n_pred} predictions, "
                         f"{truth.shape[0]} truths")
    if kind == CATEGORICAL:
        labels = predictions if predictions.ndim == 1 and \
            np.issubdtype(predictions.dtype, np.integer) \
            else classify(predictions)
        return {"mcr": float(np.mean(labels != truth.astype(np.int64)))}
    err = predictions - truth
    return {"rmse": float(np.sqrt(np.mean(err ** 2))),
            "mad": float(np.mean(np.abs(err)))}
