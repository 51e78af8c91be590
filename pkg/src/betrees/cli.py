"""Batch command-line front end: simulate, fit, predict and report.

All randomness flows from a single --seed through named substreams, so
results are reproducible from the run manifest alone (exit code 0 on
success, 2 on usage errors, 1 on runtime failures; errors are emitted as
JSON on stderr).
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .dataset import (CATEGORICAL, CONTINUOUS, SimSpec,
                      generate_heterogeneous_regression, generate_simulation,
                      load_csv, split_train_test, write_csv)
from .errors import BetreesError, ConfigError, UsageError
from .inference import (ChainConfig, EnsembleSnapshot, classify, evaluate,
                        predict_cluster_specific, predict_ensemble, run_chain,
                        variable_ranking)


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting directly."""

    def error(self, message):
        raise UsageError(message)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, config, inputs, outputs, wall_s):
    manifest = {
        "command": command,
        "version": __version__,
        "backend": kernels.active_backend(),
        "config": config,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
        "timings": {"wall_s": round(wall_s, 3)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _load_config_file(path):
    """key=value lines; '#' comments and blank lines ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _apply_config_defaults(args, parser, argv):
    """Config-file values fill in flags not given on the command line."""
    if not getattr(args, "config", None):
        return args
    file_vals = _load_config_file(args.config)
    given = {a.lstrip("-").split("=")[0].replace("-", "_")
             for a in argv if a.startswith("--")}
    for key, val in file_vals.items():
        if key in given or not hasattr(args, key):
            continue
        cur = getattr(args, key)
        if isinstance(cur, bool):
            setattr(args, key, val.lower() in ("1", "true", "yes"))
        elif isinstance(cur, int):
            setattr(args, key, int(val))
        elif isinstance(cur, float):
            setattr(args, key, float(val))
        else:
            setattr(args, key, val)
    return args


def build_parser():
    p = _Parser(prog="betrees",
                description="Mixture-of-trees sampler: simulate, fit, "
                            "predict, report")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("simulate", help="generate benchmark data")
    g = ps.add_mutually_exclusive_group(required=True)
    g.add_argument("--study", type=int, choices=(1, 2, 3))
    g.add_argument("--heterogeneous", action="store_true",
                   help="longitudinal two-scheme regression benchmark")
    ps.add_argument("--subjects", type=int, default=1000)
    ps.add_argument("--entries", type=int, default=10)
    ps.add_argument("--seed", type=int, default=1)
    ps.add_argument("--out", required=True)

    pf = sub.add_parser("fit", help="run the sampler on a CSV dataset")
    pf.add_argument("--data", required=True)
    pf.add_argument("--outcome", required=True)
    pf.add_argument("--kind", required=True, choices=(CONTINUOUS, CATEGORICAL))
    pf.add_argument("--subject-column", default=None)
    pf.add_argument("--iters", type=int, default=10000)
    pf.add_argument("--burnin", type=int, default=5000)
    pf.add_argument("--thin", type=int, default=1)
    pf.add_argument("--delta", type=float, default=1.0)
    pf.add_argument("--alpha", type=float, default=1.0)
    pf.add_argument("--q", type=int, default=5)
    pf.add_argument("--depth-cap", type=int, default=12)
    pf.add_argument("--sweeps", type=int, default=1)
    pf.add_argument("--seed", type=int, default=1)
    pf.add_argument("--threads", type=int, default=1)
    pf.add_argument("--single-cluster", action="store_true",
                    help="restrict the chain to one cluster (plain Bayesian CART)")
    pf.add_argument("--config", default=None,
                    help="key=value file supplying defaults for the flags above")
    pf.add_argument("--out-dir", required=True)

    pp = sub.add_parser("predict", help="predict from a saved snapshot")
    pp.add_argument("--model", required=True)
    pp.add_argument("--data", required=True)
    pp.add_argument("--mode", choices=("ensemble", "cluster"),
                    default="ensemble")
    pp.add_argument("--cluster-column", default="cluster")
    pp.add_argument("--out", required=True)

    pr = sub.add_parser("report", help="summarize a trace CSV")
    pr.add_argument("--trace", required=True)
    pr.add_argument("--out-dir", required=True)
    return p


def cmd_simulate(args):
    t0 = time.perf_counter()
    if args.study is not None:
        data = generate_simulation(SimSpec.for_study(args.study, args.seed))
        cfg = {"study": args.study, "seed": args.seed}
    else:
        data = generate_heterogeneous_regression(args.subjects, args.entries,
                                                 args.seed)
        cfg = {"heterogeneous": True, "subjects": args.subjects,
               "entries": args.entries, "seed": args.seed}
    write_csv(data, args.out)
    _write_manifest(args.out + ".manifest.json", "simulate", cfg, [],
                    [args.out], time.perf_counter() - t0)
    print(f"wrote {args.out}: {data.n} rows, {data.m} covariates")
    return 0


def cmd_fit(args):
    t0 = time.perf_counter()
    config = ChainConfig(iterations=args.iters, burn_in=args.burnin,
                         thinning=args.thin, seed=args.seed, delta=args.delta,
                         alpha=args.alpha, q=args.q, depth_cap=args.depth_cap,
                         sweeps_per_iteration=args.sweeps,
                         threads=args.threads,
                         single_cluster=args.single_cluster)
    config.validate()
    data = load_csv(args.data, args.outcome, args.kind, min_leaf=args.q,
                    subject_column=args.subject_column)
    result = run_chain(data, config)

    os.makedirs(args.out_dir, exist_ok=True)
    trace_path = os.path.join(args.out_dir, "trace.csv")
    snap_path = os.path.join(args.out_dir, "best_snapshot.json")
    result.trace.to_csv(trace_path, index=False)
    result.best.save(snap_path)
    outputs = [trace_path, snap_path]
    for j, tree in enumerate(result.best.trees):
        txt = os.path.join(args.out_dir, f"tree_{j}.txt")
        dot = os.path.join(args.out_dir, f"tree_{j}.dot")
        with open(txt, "w", encoding="utf-8") as fh:
            fh.write(tree.render_text(data.column_names, data.outcome_kind))
        with open(dot, "w", encoding="utf-8") as fh:
            fh.write(tree.render_dot(data.column_names, data.outcome_kind,
                                     graph_name=f"cluster_{j}"))
        outputs.extend([txt, dot])

    cfg = {"data": args.data, "outcome": args.outcome, "kind": args.kind,
           "subject_column": args.subject_column, "iters": args.iters,
           "burnin": args.burnin, "thin": args.thin, "delta": args.delta,
           "alpha": args.alpha, "q": args.q, "depth_cap": args.depth_cap,
           "sweeps": args.sweeps, "seed": args.seed, "threads": args.threads,
           "single_cluster": args.single_cluster}
    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "fit", cfg,
                    [args.data], outputs, time.perf_counter() - t0)
    s = result.summaries
    print(f"fit done: {s.n_retained} retained iterations, modal cluster "
          f"count {s.modal_cluster_count}, best joint log-lik "
          f"{result.best.score:.3f} at iteration {result.best.iteration}")
    return 0


def cmd_predict(args):
    import csv as _csv
    t0 = time.perf_counter()
    snapshot = EnsembleSnapshot.load(args.model)

    with open(args.data, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [rec for rec in reader if rec]
    missing = [c for c in snapshot.column_names if c not in header]
    if missing:
        raise BetreesError(f"prediction data lacks covariate columns {missing}")
    col_idx = [header.index(c) for c in snapshot.column_names]
    try:
        X = np.array([[float(rec[j]) for j in col_idx] for rec in rows])
    except ValueError as e:
        raise BetreesError(f"non-numeric covariate cell: {e}") from None

    z = None
    if args.mode == "cluster":
        if args.cluster_column not in header:
            raise UsageError(f"cluster mode needs a {args.cluster_column!r} "
                             "column in the data")
        zi = header.index(args.cluster_column)
        z = np.array([int(float(rec[zi])) for rec in rows], dtype=np.int64)

    out_rows = []
    if snapshot.outcome_kind == CONTINUOUS:
        if args.mode == "ensemble":
            est = predict_ensemble(snapshot, X)
            header_out = ["estimate"]
            out_rows = [[repr(float(v))] for v in est]
        else:
            est, lo, hi = predict_cluster_specific(snapshot, X, z)
            header_out = ["estimate", "lower", "upper"]
            out_rows = [[repr(float(a)), repr(float(b)), repr(float(c))]
                        for a, b, c in zip(est, lo, hi)]
    else:
        probs = predict_ensemble(snapshot, X) if args.mode == "ensemble" \
            else predict_cluster_specific(snapshot, X, z)
        labels = classify(probs)
        header_out = [f"p_{c}" for c in range(snapshot.n_categories)] + ["class"]
        out_rows = [[repr(float(v)) for v in p] + [str(int(c))]
                    for p, c in zip(probs, labels)]

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(header_out)
        w.writerows(out_rows)
    _write_manifest(args.out + ".manifest.json", "predict",
                    {"model": args.model, "data": args.data, "mode": args.mode},
                    [args.model, args.data], [args.out],
                    time.perf_counter() - t0)
    print(f"wrote {args.out}: {len(out_rows)} predictions")
    return 0


def cmd_report(args):
    import pandas as pd
    t0 = time.perf_counter()
    trace = pd.read_csv(args.trace)
    kept = trace[trace["retained"] == 1]
    if not len(kept):
        raise BetreesError("trace has no retained iterations")
    os.makedirs(args.out_dir, exist_ok=True)

    hist = kept["n_clusters"].value_counts().sort_index()
    hist_path = os.path.join(args.out_dir, "cluster_count_hist.csv")
    hist.rename_axis("n_clusters").rename("iterations").to_csv(hist_path)

    ll_path = os.path.join(args.out_dir, "loglik_trace.csv")
    trace[["iteration", "retained", "joint_loglik", "cond_loglik",
           "n_clusters"]].to_csv(ll_path, index=False)

    xi_cols = [c for c in trace.columns if c.startswith("xi_bar_")]
    xi_bar = kept[xi_cols].mean()
    xi_bar = xi_bar / xi_bar.sum()
    xi_path = os.path.join(args.out_dir, "xi_bar.csv")
    xi_bar.rename_axis("covariate").rename("probability").to_csv(xi_path)

    summary = {
        "n_retained": int(len(kept)),
        "cluster_count_hist": {int(k): int(v) for k, v in hist.items()},
        "mean_joint_loglik": float(kept["joint_loglik"].mean()),
        "mean_cond_loglik": float(kept["cond_loglik"].mean()),
        "xi_bar": {c.replace("xi_bar_", "", 1): float(v)
                   for c, v in xi_bar.items()},
    }
    summary_path = os.path.join(args.out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_manifest(os.path.join(args.out_dir, "report.manifest.json"),
                    "report", {"trace": args.trace}, [args.trace],
                    [hist_path, ll_path, xi_path, summary_path],
                    time.perf_counter() - t0)
    print(f"wrote report to {args.out_dir}")
    return 0


_COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit,
             "predict": cmd_predict, "report": cmd_report}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_defaults(args, parser, argv)
        return _COMMANDS[args.cmd](args)
    except (UsageError, ConfigError) as e:
        json.dump({"error": str(e), "type": "usage"}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except BetreesError as e:
        json.dump({"error": str(e), "type": "runtime"}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except OSError as e:
        json.dump({"error": str(e), "type": "runtime"}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
