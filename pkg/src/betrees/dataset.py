"""Datasets: CSV ingestion, simulation generators and train/test splitting.

A `Dataset` is an immutable covariate matrix plus outcome vector, together
with per-column threshold grids.  Grids are the midpoints between adjacent
sorted unique observed values: routing through any decision tree depends only
on which observed-value gap a threshold falls in, so midpoints are a
sufficient finite support for threshold proposals.
"""

import csv
import io

import numpy as np

from .errors import DataError
from .seeding import STREAM_DATA, STREAM_SPLIT, substream

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


def _threshold_grid(col: np.ndarray) -> np.ndarray:
    u = np.unique(col)
    if u.size < 2:
        return np.empty(0)
    return (u[:-1] + u[1:]) / 2.0


class Dataset:
    """Immutable regression/classification data with threshold grids.

    Parameters
    ----------
    X : (n, m) float array of covariates.
    y : (n,) outcome; floats for continuous, dense integer labels 0..K-1
        for categorical.
    outcome_kind : "continuous" or "categorical".
    column_names : m covariate names.
    n_categories : number of classes K (categorical only).
    subject_ids : optional (n,) integer ids grouping longitudinal rows.
    """

    def __init__(self, X, y, outcome_kind, column_names, outcome_name="y",
                 n_categories=0, subject_ids=None, min_leaf=2):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        n, m = X.shape
        if len(column_names) != m:
            raise DataError("column_names length does not match X")
        if not np.isfinite(X).all():
            bad = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite covariate at row {bad[0] + 1}, "
                            f"column {column_names[bad[1]]!r}")
        if outcome_kind == CONTINUOUS:
            y = np.asarray(y, dtype=np.float64)
            if not np.isfinite(y).all():
                bad = int(np.nonzero(~np.isfinite(y))[0][0])
                raise DataError(f"non-finite outcome at row {bad + 1}")
            n_categories = 0
        elif outcome_kind == CATEGORICAL:
            yf = np.asarray(y, dtype=np.float64)
            yi = yf.astype(np.int64)
            if not np.all(yf == yi):
                bad = int(np.nonzero(yf != yi)[0][0])
                raise DataError(f"non-integer class label at row {bad + 1}")
            labels = np.unique(yi)
            k = n_categories if n_categories else int(labels.max()) + 1
            if labels.min() < 0 or not np.array_equal(labels, np.arange(labels.max() + 1)):
                raise DataError("class labels must be dense integers 0..K-1 "
                                f"(got {labels.tolist()})")
            if labels.max() + 1 > k:
                raise DataError(f"label {labels.max()} outside 0..{k - 1}")
            y = yi
            n_categories = k
        else:
            raise DataError(f"unknown outcome kind {outcome_kind!r}")
        if y.shape[0] != n:
            raise DataError("X and y lengths differ")
        if n < 2 * min_leaf:
            raise DataError(f"too few rows: {n} < 2*q = {2 * min_leaf}")
        if subject_ids is not None:
            subject_ids = np.asarray(subject_ids, dtype=np.int64)
            if subject_ids.shape[0] != n:
                raise DataError("subject_ids length does not match X")

        self.X = X
        self.y = y
        self.outcome_kind = outcome_kind
        self.n_categories = n_categories
        self.column_names = tuple(column_names)
        self.outcome_name = outcome_name
        self.subject_ids = subject_ids
        self.thresholds = tuple(_threshold_grid(X[:, c]) for c in range(m))
        for a in (self.X, self.y) + self.thresholds:
            a.flags.writeable = False
        if subject_ids is not None:
            self.subject_ids.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def y_float(self) -> np.ndarray:
        return self.y.astype(np.float64) if self.y.dtype != np.float64 else self.y

    def outcome_variance(self) -> float:
        """Population variance of the outcome (continuous only)."""
        return float(np.var(self.y))

    def subset(self, rows) -> "Dataset":
        """New Dataset from a row subset; threshold grids are rebuilt."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.y[rows], self.outcome_kind,
                       self.column_names, self.outcome_name,
                       n_categories=self.n_categories,
                       subject_ids=None if self.subject_ids is None
                       else self.subject_ids[rows])


def load_csv(path, outcome_column, outcome_kind, min_leaf=2,
             subject_column=None) -> Dataset:
    """Read an RFC-4180 CSV (header row, UTF-8, all cells numeric).

    The outcome column becomes y; an optional subject column is stored as
    subject ids; all remaining columns become covariates, in file order.
    Parse failures report the file row and column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _parse_csv(fh, outcome_column, outcome_kind, min_leaf, subject_column)


def _parse_csv(fh, outcome_column, outcome_kind, min_leaf, subject_column):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file: no header row") from None
    header = [h.strip() for h in header]
    if outcome_column not in header:
        raise DataError(f"missing outcome column {outcome_column!r}")
    if subject_column is not None and subject_column not in header:
        raise DataError(f"missing subject column {subject_column!r}")
    y_col = header.index(outcome_column)
    s_col = header.index(subject_column) if subject_column is not None else -1
    x_cols = [j for j in range(len(header)) if j != y_col and j != s_col]

    rows = []
    for line_no, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise DataError(f"row {line_no}: expected {len(header)} cells, "
                            f"got {len(rec)}")
        vals = []
        for j, cell in enumerate(rec):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(f"non-numeric cell at row {line_no}, "
                                f"column {header[j]!r}: {cell!r}") from None
        rows.append(vals)
    if not rows:
        raise DataError("no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    subject_ids = arr[:, s_col] if s_col >= 0 else None
    if subject_ids is not None and not np.all(subject_ids == subject_ids.astype(np.int64)):
        raise DataError(f"subject column {subject_column!r} must be integer")
    return Dataset(arr[:, x_cols], arr[:, y_col], outcome_kind,
                   [header[j] for j in x_cols], outcome_name=outcome_column,
                   subject_ids=subject_ids, min_leaf=min_leaf)


def write_csv(dataset: Dataset, path) -> None:
    """Write a Dataset back out in the schema `load_csv` accepts."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        header = list(dataset.column_names) + [dataset.outcome_name]
        if dataset.subject_ids is not None:
            header.append("subject_id")
        w.writerow(header)
        for i in range(dataset.n):
            rec = [repr(float(v)) for v in dataset.X[i]]
            if dataset.outcome_kind == CATEGORICAL:
                rec.append(str(int(dataset.y[i])))
            else:
                rec.append(repr(float(dataset.y[i])))
            if dataset.subject_ids is not None:
                rec.append(str(int(dataset.subject_ids[i])))
            w.writerow(rec)


class SimBlock:
    """One generator block: `n_rows` rows with per-covariate uniform bounds
    and a Gaussian outcome."""

    def __init__(self, n_rows, x_ranges, y_mean, y_sd):
        self.n_rows = int(n_rows)
        self.x_ranges = tuple((float(a), float(b)) for a, b in x_ranges)
        self.y_mean = float(y_mean)
        self.y_sd = float(y_sd)

    def __eq__(self, other):
        return (self.n_rows, self.x_ranges, self.y_mean, self.y_sd) == \
            (other.n_rows, other.x_ranges, other.y_mean, other.y_sd)


# Benchmark settings for the three simulation studies.  Three covariate
# patterns in study 1 (the third column mirrors the first two and makes the
# partition recoverable two ways); two covariates in studies 2 and 3.
_STUDY_BLOCKS = {
    1: (
        SimBlock(100, [(0.1, 0.4), (0.1, 0.4), (0.6, 0.9)], 1.0, 0.5),
        SimBlock(100, [(0.1, 0.4), (0.6, 0.9), (0.6, 0.9)], 3.0, 0.5),
        SimBlock(100, [(0.6, 0.9), (0.1, 0.9), (0.1, 0.4)], 5.0, 0.5),
    ),
    2: (
        SimBlock(100, [(0.1, 0.4), (0.1, 0.4)], 1.0, 0.5),
        SimBlock(100, [(0.1, 0.4), (0.6, 0.9)], 3.0, 0.5),
        SimBlock(100, [(0.6, 0.9), (0.1, 0.9)], 5.0, 0.5),
        SimBlock(100, [(0.1, 0.4), (0.1, 0.4)], 1.5, 0.5),
        SimBlock(100, [(0.1, 0.4), (0.6, 0.9)], 5.5, 0.5),
        SimBlock(100, [(0.6, 0.9), (0.1, 0.9)], 3.5, 0.5),
    ),
    3: (
        SimBlock(100, [(0.1, 0.4), (0.1, 0.4)], 1.0, 0.5),
        SimBlock(100, [(0.1, 0.4), (0.6, 0.9)], 3.0, 0.5),
        SimBlock(100, [(0.6, 0.9), (0.1, 0.9)], 5.0, 0.5),
        SimBlock(100, [(0.1, 0.4), (0.6, 0.9)], 5.0, 0.5),
        SimBlock(100, [(0.6, 0.9), (0.6, 0.9)], 1.0, 0.5),
        SimBlock(100, [(0.1, 0.9), (0.1, 0.4)], 3.0, 0.5),
    ),
}


class SimSpec:
    """Identifies a simulation study and seed; blocks are fixed per study."""

    def __init__(self, study, seed, blocks=None):
        if study not in _STUDY_BLOCKS:
            raise DataError(f"unknown study {study!r}; must be 1, 2 or 3")
        self.study = int(study)
        self.seed = int(seed)
        self.blocks = tuple(blocks) if blocks is not None else _STUDY_BLOCKS[study]
        if self.blocks != _STUDY_BLOCKS[study]:
            raise DataError(f"blocks do not match the study-{study} table")

    @classmethod
    def for_study(cls, study, seed) -> "SimSpec":
        return cls(study, seed)


def generate_simulation(spec: SimSpec) -> Dataset:
    """Draw the blockwise uniform/Gaussian benchmark data for a study."""
    rng = substream(spec.seed, STREAM_DATA, spec.study)
    m = len(spec.blocks[0].x_ranges)
    xs, ys = [], []
    for blk in spec.blocks:
        x = np.empty((blk.n_rows, m))
        for c, (lo, hi) in enumerate(blk.x_ranges):
            x[:, c] = rng.uniform(lo, hi, size=blk.n_rows)
        xs.append(x)
        ys.append(rng.normal(blk.y_mean, blk.y_sd, size=blk.n_rows))
    names = [f"X{c + 1}" for c in range(m)]
    return Dataset(np.vstack(xs), np.concatenate(ys), CONTINUOUS, names)


def _scheme_a_mean(x1, x2):
    if x1 < 0.5:
        return 1.0 if x2 < 0.5 else 3.0
    return 5.0


def _scheme_b_mean(x1, x2):
    if x2 < 0.5:
        return 3.0
    return 5.0 if x1 < 0.5 else 1.0


def generate_heterogeneous_regression(n_subjects, entries_per_subject,
                                      seed) -> Dataset:
    """Longitudinal-style data mixing two conflicting partition schemes.

    Subjects alternate between two planted 3-region partitions of (X1, X2)
    whose region means disagree everywhere, so a single tree cannot fit both;
    X3 is a within-subject time index and X4 pure noise.  Outcome noise sd
    is 0.5 around the scheme's region mean.
    """
    if n_subjects <= 0 or entries_per_subject <= 0:
        raise DataError("positive sizes required")
    rng = substream(seed, STREAM_DATA, 99)
    n = n_subjects * entries_per_subject
    x12 = rng.uniform(0.1, 0.9, size=(n, 2))
    x4 = rng.normal(0.0, 1.0, size=n)
    noise = rng.normal(0.0, 0.5, size=n)
    x3 = np.tile((np.arange(entries_per_subject) + 1.0) / entries_per_subject,
                 n_subjects)
    subject = np.repeat(np.arange(n_subjects, dtype=np.int64),
                        entries_per_subject)
    y = np.empty(n)
    for i in range(n):
        f = _scheme_a_mean if subject[i] % 2 == 0 else _scheme_b_mean
        y[i] = f(x12[i, 0], x12[i, 1]) + noise[i]
    X = np.column_stack([x12, x3, x4])
    return Dataset(X, y, CONTINUOUS, ["X1", "X2", "X3", "X4"],
                   subject_ids=subject)


def split_train_test(dataset: Dataset, fraction, seed, by="rows"):
    """Disjoint, exhaustive train/test partition of the rows.

    "rows" shuffles individual rows; "subjects" keeps each subject's rows
    together (needs subject ids).  Deterministic under the seed.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0, 1), got {fraction}")
    rng = substream(seed, STREAM_SPLIT)
    n = dataset.n
    if by == "rows":
        perm = rng.permutation(n)
        n_train = min(n - 1, max(1, int(round(fraction * n))))
        train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    elif by == "subjects":
        if dataset.subject_ids is None:
            raise DataError("subject-level split requires subject ids")
        subjects = np.unique(dataset.subject_ids)
        perm = rng.permutation(subjects)
        k = min(len(subjects) - 1, max(1, int(round(fraction * len(subjects)))))
        train_set = set(perm[:k].tolist())
        mask = np.fromiter((s in train_set for s in dataset.subject_ids),
                           dtype=bool, count=n)
        train, test = np.nonzero(mask)[0], np.nonzero(~mask)[0]
    else:
        raise DataError(f"unknown split mode {by!r}")
    return dataset.subset(train), dataset.subset(test)


def dataset_from_csv_text(text, outcome_column, outcome_kind, min_leaf=2,
                          subject_column=None) -> Dataset:
    """Parse CSV content from a string (convenience for tests)."""
    return _parse_csv(io.StringIO(text), outcome_column, outcome_kind,
                      min_leaf, subject_column)
