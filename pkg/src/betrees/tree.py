"""Heap-indexed binary decision trees.

Node k's children live at 2k+1 (left) and 2k+2 (right); the root is node 0
and depth(k) = floor(log2(k+1)).  Interior nodes carry a split covariate and
threshold; rows with x[covariate] < threshold route left, ties route right.
Leaves carry sampled parameters and/or sufficient statistics of the rows
routed to them.

Trees are value-semantic: `grow` and `prune` return modified copies, and the
pair are exact structural inverses.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import CATEGORICAL, CONTINUOUS

DEFAULT_DEPTH_CAP = 12


def child_indices(k):
    """(left, right) child indices of node k."""
    return 2 * k + 1, 2 * k + 2


def parent_index(k):
    if k <= 0:
        raise ValueError("the root node has no parent")
    return (k - 1) // 2


def node_depth(k):
    """floor(log2(k+1)) without float rounding."""
    return (k + 1).bit_length() - 1


@dataclass
class GaussianParams:
    mu: float
    sigma2: float


@dataclass
class CategoricalParams:
    p: np.ndarray

    def __eq__(self, other):
        return isinstance(other, CategoricalParams) and np.array_equal(self.p, other.p)


@dataclass
class GaussianStats:
    """Count, mean, and centered sum of squares of a set of responses."""
    n: int = 0
    mean: float = 0.0
    sse: float = 0.0

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return cls()
        mean = float(values.mean())
        return cls(int(values.size), mean, float(((values - mean) ** 2).sum()))

    def add(self, y):
        """Welford update with one new response."""
        self.n += 1
        d = y - self.mean
        self.mean += d / self.n
        self.sse += d * (y - self.mean)

    def remove(self, y):
        """Inverse of `add`; undefined if y was never added."""
        if self.n <= 1:
            self.n, self.mean, self.sse = 0, 0.0, 0.0
            return
        d = y - self.mean
        self.mean = (self.mean * self.n - y) / (self.n - 1)
        self.sse -= d * (y - self.mean)
        self.n -= 1
        if self.sse < 0.0:
            self.sse = 0.0


@dataclass
class CategoricalStats:
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def of(cls, labels, n_categories):
        labels = np.asarray(labels, dtype=np.int64)
        return cls(np.bincount(labels, minlength=n_categories).astype(np.int64))

    @property
    def n(self):
        return int(self.counts.sum())

    def add(self, label):
        self.counts[label] += 1

    def remove(self, label):
        self.counts[label] -= 1

    def __eq__(self, other):
        return isinstance(other, CategoricalStats) and np.array_equal(self.counts, other.counts)


class Node:
    """A single tree node; `split` distinguishes interior from leaf."""

    __slots__ = ("split", "feature", "threshold", "params", "stats")

    def __init__(self, split=False, feature=-1, threshold=math.nan,
                 params=None, stats=None):
        self.split = split
        self.feature = feature
        self.threshold = threshold
        self.params = params
        self.stats = stats

    def copy(self):
        return Node(self.split, self.feature, self.threshold,
                    _copy_params(self.params), _copy_stats(self.stats))

    def __eq__(self, other):
        if self.split != other.split:
            return False
        if self.split:
            return self.feature == other.feature and self.threshold == other.threshold
        return self.params == other.params and self.stats == other.stats


def _copy_params(p):
    if p is None:
        return None
    if isinstance(p, GaussianParams):
        return GaussianParams(p.mu, p.sigma2)
    return CategoricalParams(p.p.copy())


def _copy_stats(s):
    if s is None:
        return None
    if isinstance(s, GaussianStats):
        return GaussianStats(s.n, s.mean, s.sse)
    return CategoricalStats(s.counts.copy())


class Tree:
    """Sparse map from heap index to Node; always contains node 0."""

    def __init__(self, nodes=None):
        self.nodes = nodes if nodes is not None else {0: Node()}

    @classmethod
    def root_only(cls, params=None, stats=None):
        return cls({0: Node(params=params, stats=stats)})

    def copy(self):
        return Tree({k: nd.copy() for k, nd in self.nodes.items()})

    def __eq__(self, other):
        return self.nodes.keys() == other.nodes.keys() and all(
            self.nodes[k] == other.nodes[k] for k in self.nodes)

    def __contains__(self, k):
        return k in self.nodes

    def is_leaf(self, k):
        return not self.nodes[k].split

    def leaves(self):
        return sorted(k for k, nd in self.nodes.items() if not nd.split)

    def interior_nodes(self):
        return sorted(k for k, nd in self.nodes.items() if nd.split)

    @property
    def n_leaves(self):
        return sum(1 for nd in self.nodes.values() if not nd.split)

    def max_index(self):
        return max(self.nodes)

    def depth(self):
        return max(node_depth(k) for k in self.nodes)

    def validate(self):
        """Check the heap-closure and split-flag invariants."""
        if 0 not in self.nodes:
            raise ValueError("node 0 missing")
        for k, nd in self.nodes.items():
            if k > 0:
                p = parent_index(k)
                if p not in self.nodes or not self.nodes[p].split:
                    raise ValueError(f"node {k} has no split parent")
            left, right = child_indices(k)
            if nd.split:
                if left not in self.nodes or right not in self.nodes:
                    raise ValueError(f"interior node {k} missing children")
                if nd.feature < 0 or math.isnan(nd.threshold):
                    raise ValueError(f"interior node {k} lacks a split rule")
            else:
                if left in self.nodes or right in self.nodes:
                    raise ValueError(f"leaf node {k} has children")

    def grow(self, k, feature, threshold):
        """Copy with leaf k turned into an interior node with two leaf children."""
        if self.nodes[k].split:
            raise ValueError(f"grow target {k} is not a leaf")
        t = self.copy()
        nd = t.nodes[k]
        nd.split = True
        nd.feature = int(feature)
        nd.threshold = float(threshold)
        nd.params = None
        nd.stats = None
        left, right = child_indices(k)
        t.nodes[left] = Node()
        t.nodes[right] = Node()
        return t

    def prune(self, k):
        """Copy with interior node k (both children leaves) turned back into a leaf."""
        nd = self.nodes[k]
        left, right = child_indices(k)
        if not nd.split:
            raise ValueError(f"prune target {k} is not interior")
        if self.nodes[left].split or self.nodes[right].split:
            raise ValueError(f"prune target {k} has interior children")
        t = self.copy()
        del t.nodes[left], t.nodes[right]
        nd = t.nodes[k]
        nd.split = False
        nd.feature = -1
        nd.threshold = math.nan
        return t

    def route(self, x):
        """Leaf index reached by a single covariate vector."""
        k = 0
        while self.nodes[k].split:
            nd = self.nodes[k]
            k = 2 * k + 1 if x[nd.feature] < nd.threshold else 2 * k + 2
        return k

    # ---- packed array form used by the kernels ----

    def pack(self):
        """(flag, feat, thr) dense arrays sized max_index+1."""
        size = self.max_index() + 1
        flag = np.zeros(size, dtype=np.int8)
        feat = np.zeros(size, dtype=np.int64)
        thr = np.zeros(size, dtype=np.float64)
        for k, nd in self.nodes.items():
            if nd.split:
                flag[k] = 1
                feat[k] = nd.feature
                thr[k] = nd.threshold
        return flag, feat, thr

    def pack_gaussian_params(self):
        size = self.max_index() + 1
        mu = np.zeros(size)
        sig2 = np.ones(size)
        for k, nd in self.nodes.items():
            if not nd.split:
                if nd.params is None:
                    raise ValueError(f"leaf {k} has no sampled parameters")
                mu[k] = nd.params.mu
                sig2[k] = nd.params.sigma2
        return mu, sig2

    def pack_categorical_logp(self, n_categories):
        size = self.max_index() + 1
        logp = np.zeros((size, n_categories))
        for k, nd in self.nodes.items():
            if not nd.split:
                if nd.params is None:
                    raise ValueError(f"leaf {k} has no sampled parameters")
                logp[k] = np.log(nd.params.p)
        return logp

    # ---- serialization ----

    def to_dict(self, outcome_kind):
        nodes = {}
        for k in sorted(self.nodes):
            nd = self.nodes[k]
            if nd.split:
                nodes[str(k)] = {"split": 1, "feature": nd.feature,
                                 "threshold": nd.threshold}
            else:
                rec = {"split": 0}
                if nd.params is not None:
                    if outcome_kind == CONTINUOUS:
                        rec["mu"] = nd.params.mu
                        rec["sigma2"] = nd.params.sigma2
                    else:
                        rec["p"] = [float(v) for v in nd.params.p]
                if nd.stats is not None:
                    if outcome_kind == CONTINUOUS:
                        rec["n"] = nd.stats.n
                        rec["mean"] = nd.stats.mean
                        rec["sse"] = nd.stats.sse
                    else:
                        rec["counts"] = [int(v) for v in nd.stats.counts]
                nodes[str(k)] = rec
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d, outcome_kind):
        nodes = {}
        for ks, rec in d["nodes"].items():
            k = int(ks)
            if rec["split"]:
                nodes[k] = Node(True, int(rec["feature"]), float(rec["threshold"]))
            else:
                params = stats = None
                if outcome_kind == CONTINUOUS:
                    if "mu" in rec:
                        params = GaussianParams(float(rec["mu"]), float(rec["sigma2"]))
                    if "n" in rec:
                        stats = GaussianStats(int(rec["n"]), float(rec["mean"]),
                                              float(rec["sse"]))
                else:
                    if "p" in rec:
                        params = CategoricalParams(np.asarray(rec["p"], dtype=np.float64))
                    if "counts" in rec:
                        stats = CategoricalStats(np.asarray(rec["counts"], dtype=np.int64))
                nodes[k] = Node(params=params, stats=stats)
        tree = cls(nodes)
        tree.validate()
        return tree

    def to_json(self, outcome_kind):
        return json.dumps(self.to_dict(outcome_kind), sort_keys=True)

    def render_text(self, column_names, outcome_kind):
        """Indented plain-text rendering."""
        lines = []

        def walk(k, indent):
            nd = self.nodes[k]
            pad = "  " * indent
            if nd.split:
                name = column_names[nd.feature]
                lines.append(f"{pad}[{k}] {name} < {nd.threshold:.6g} ?")
                walk(2 * k + 1, indent + 1)
                walk(2 * k + 2, indent + 1)
            else:
                lines.append(f"{pad}[{k}] leaf {_leaf_label(nd, outcome_kind)}")

        walk(0, 0)
        return "\n".join(lines) + "\n"

    def render_dot(self, column_names, outcome_kind, graph_name="tree"):
        """Graphviz DOT rendering of the tree."""
        out = [f"digraph {graph_name} {{", '  node [shape=box, fontname="helvetica"];']
        for k in sorted(self.nodes):
            nd = self.nodes[k]
            if nd.split:
                label = f"{column_names[nd.feature]} < {nd.threshold:.6g}"
            else:
                label = f"leaf {_leaf_label(nd, outcome_kind)}"
            out.append(f'  n{k} [label="{label}"];')
            if nd.split:
                out.append(f'  n{k} -> n{2 * k + 1} [label="yes"];')
                out.append(f'  n{k} -> n{2 * k + 2} [label="no"];')
        out.append("}")
        return "\n".join(out) + "\n"


def _leaf_label(nd, outcome_kind):
    bits = []
    if nd.stats is not None:
        if outcome_kind == CONTINUOUS:
            bits.append(f"n={nd.stats.n} mean={nd.stats.mean:.4g}")
        else:
            bits.append(f"counts={nd.stats.counts.tolist()}")
    if nd.params is not None:
        if outcome_kind == CONTINUOUS:
            bits.append(f"mu={nd.params.mu:.4g} s2={nd.params.sigma2:.4g}")
        else:
            bits.append("p=[" + ", ".join(f"{v:.3g}" for v in nd.params.p) + "]")
    return " ".join(bits) if bits else "(empty)"


def route_dataset(tree, dataset, rows=None):
    """Leaf index for each requested row of a dataset."""
    rows = np.arange(dataset.n, dtype=np.int64) if rows is None \
        else np.asarray(rows, dtype=np.int64)
    flag, feat, thr = tree.pack()
    return kernels.route_rows(flag, feat, thr, dataset.X, rows)


def leaf_partition(tree, dataset, rows=None):
    """Map from leaf index to the sufficient statistics of its routed rows.

    Every row lands in exactly one leaf; leaves receiving no rows get empty
    stats.
    """
    rows = np.arange(dataset.n, dtype=np.int64) if rows is None \
        else np.asarray(rows, dtype=np.int64)
    flag, feat, thr = tree.pack()
    leaf_idx = kernels.route_rows(flag, feat, thr, dataset.X, rows)
    n_nodes = len(flag)
    result = {}
    if dataset.outcome_kind == CONTINUOUS:
        counts, mean, sse = kernels.leaf_stats_cont(leaf_idx, dataset.y[rows], n_nodes)
        for k in tree.leaves():
            result[k] = GaussianStats(int(counts[k]), float(mean[k]), float(sse[k]))
    else:
        counts = kernels.leaf_counts_cat(leaf_idx, dataset.y[rows], n_nodes,
                                         dataset.n_categories)
        for k in tree.leaves():
            result[k] = CategoricalStats(counts[k].copy())
    return result
