"""Command-line front end.

Exit status: 0 on success, 2 for usage or input errors, 3 when the requested
number of clusters cannot be reached with connected clusters.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    class_seed,
    featurize,
    nearest_neighbor_predict,
    pca_baseline,
    save_model,
    train,
)
from .clustering import InfeasibleClusteringError, acdt
from .dataset import DataFormatError, gen_s_curve, gen_swiss_roll, load_idx, load_matrix, save_matrix
from .flats import fit_flats, load_flats, msre, residuals, save_flats
from .graph import build_knn_graph, connected_components

log = logging.getLogger("tangentflats")

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3

GENERATORS = {"swiss-roll": gen_swiss_roll, "s-curve": gen_s_curve}


class UsageError(Exception):
    pass


def run_config(args) -> dict:
    """The validated arguments, as recorded in every manifest."""
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def write_labels(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("sample_index,cluster_label\n")
        for i, c in enumerate(labels):
            fh.write(f"{i},{int(c)}\n")


def read_labels(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: no labels")
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            try:
                rows.append((int(rec[0]), int(rec[1])))
            except (ValueError, IndexError):
                raise DataFormatError(f"{path}: bad label record {rec!r}", row=r) from None
    if not rows:
        raise DataFormatError(f"{path}: no labels")
    idx = np.array([r[0] for r in rows])
    if not np.array_equal(np.sort(idx), np.arange(len(rows))):
        raise DataFormatError(f"{path}: sample indices are not 0..{len(rows) - 1}")
    labels = np.empty(len(rows), dtype=np.int64)
    labels[idx] = [r[1] for r in rows]
    return labels


def _warn_k(k, m):
    if not 0.005 * m <= k <= 0.02 * m:
        log.warning("k=%d is outside 0.5%%-2%% of the %d samples (%.0f-%.0f); "
                    "large k can short-circuit the manifold", k, m, 0.005 * m, 0.02 * m)


def cmd_generate(args):
    gen = GENERATORS[args.kind]
    samples = gen(args.n, args.noise, args.seed)
    save_matrix(args.output, samples, format=args.format)
    log.info("wrote %d x %d samples to %s", samples.m, samples.N, args.output)
    return 0


def cmd_approximate(args):
    X = load_matrix(args.input, format=args.format)
    if not 1 <= args.dim <= X.N:
        raise UsageError(f"--dim must be in [1, {X.N}]")
    if not 1 <= args.k < X.m:
        raise UsageError(f"--k must be in [1, {X.m - 1}]")
    _warn_k(args.k, X.m)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    graph = build_knn_graph(X, args.k, threads=args.threads)
    part = acdt(X, args.k, args.clusters, args.dim, mode=args.mode, graph=graph,
                threads=args.threads, debug=args.debug)
    flats = fit_flats(X, part.labels, args.dim)
    wall = time.perf_counter() - start

    error = msre(X, part.labels, flats)
    write_labels(out / "labels.csv", part.labels)
    save_flats(flats, out / "flats")
    manifest = {
        "command": "approximate",
        "version": __version__,
        "config": run_config(args),
        "m": X.m,
        "N": X.N,
        "mode": args.mode,
        "objective": part.objective,
        "msre": error,
        "cluster_sizes": part.sizes(),
        "iterations": len(part.history),
        "graph_components": int(connected_components(graph).max()) + 1,
        "wall_time_s": wall,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    log.info("%d clusters, objective %.6g, MSRE %.6g", part.n_clusters, part.objective, error)
    return 0


def evaluate_artifacts(X, labels, flats) -> dict:
    if len(labels) != X.m:
        raise DataFormatError(f"{len(labels)} labels for {X.m} samples")
    if labels.min() < 0 or labels.max() >= len(flats):
        raise DataFormatError(f"labels reference flats outside 0..{len(flats) - 1}")
    if any(f.N != X.N for f in flats):
        raise DataFormatError("flat dimension does not match the samples")
    clusters = []
    for c in range(len(flats)):
        r = residuals(flats[c], X.data[labels == c])
        clusters.append({
            "label": c,
            "size": int(len(r)),
            "mean_sq_residual": float(np.mean(r * r)) if len(r) else 0.0,
            "max_residual": float(r.max()) if len(r) else 0.0,
        })
    return {"m": X.m, "msre": msre(X, labels, flats), "clusters": clusters}


def cmd_evaluate(args):
    X = load_matrix(args.input, format=args.format)
    labels = read_labels(args.labels)
    flats = load_flats(args.flats)
    metrics = evaluate_artifacts(X, labels, flats)
    text = json.dumps(metrics, indent=2)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text)
    return 0


def _sample_per_class(samples, cap, seed):
    picked = []
    for c in np.unique(samples.labels):
        idx = np.flatnonzero(samples.labels == c)
        rng = np.random.default_rng(class_seed(seed, int(c)))
        picked.append(np.sort(rng.choice(idx, min(cap, len(idx)), replace=False)))
    return np.concatenate(picked)


def _write_predictions(path, truth, pred):
    with open(path, "w", newline="") as fh:
        fh.write("index,true,predicted\n")
        for i, (t, p) in enumerate(zip(truth, pred)):
            fh.write(f"{i},{int(t)},{int(p)}\n")


def cmd_classify(args):
    train_set = load_idx(args.train_images, args.train_labels)
    test_set = load_idx(args.test_images, args.test_labels)
    if train_set.N != test_set.N:
        raise DataFormatError("train and test images differ in size")
    tr = train_set.subset(_sample_per_class(train_set, args.cap_per_class, args.seed))
    # test draws use a separate stream so they do not depend on the train cap
    te = test_set.subset(_sample_per_class(test_set, args.test_per_class, args.seed + 1))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    model = train(tr, args.flats_per_class, args.k, args.dim, mode=args.mode,
                  threads=args.threads)
    train_time = time.perf_counter() - start
    save_model(model, out / "model")

    results = {}
    f_tr, f_te = featurize(model, tr), featurize(model, te)
    results["flat_features"] = nearest_neighbor_predict(f_tr, tr.labels, f_te)
    results["original_space"] = nearest_neighbor_predict(tr.data, tr.labels, te.data)
    pca = pca_baseline(tr, min(args.pca_dims, tr.N))
    results["pca"] = nearest_neighbor_predict(pca.transform(tr), tr.labels, pca.transform(te))

    report = {
        "command": "classify",
        "version": __version__,
        "config": run_config(args),
        "train_per_class": {int(c): int(n) for c, n in zip(*np.unique(tr.labels, return_counts=True))},
        "test_per_class": {int(c): int(n) for c, n in zip(*np.unique(te.labels, return_counts=True))},
        "feature_dim": model.feature_dim,
        "pca_dims": int(pca.components.shape[0]),
        "train_time_s": train_time,
        "accuracy": {},
    }
    for name, pred in results.items():
        _write_predictions(out / f"predictions_{name}.csv", te.labels, pred)
        report["accuracy"][name] = float(np.mean(pred == te.labels))
    (out / "report.json").write_text(json.dumps(report, indent=2))
    log.info("accuracy: %s", ", ".join(f"{k} {v:.4f}" for k, v in report["accuracy"].items()))
    return 0


def cmd_bench(args):
    rows = []
    for n in args.sizes:
        for trial in range(args.trials):
            X = gen_swiss_roll(n, args.noise, args.seed + trial)
            start = time.perf_counter()
            acdt(X, args.k, args.clusters, args.dim, mode=args.mode, threads=args.threads)
            rows.append((n, trial, time.perf_counter() - start))
            log.info("n=%d trial=%d %.3fs", n, trial, rows[-1][2])
    text = "n,trial,seconds\n" + "".join(f"{n},{t},{s:.6f}\n" for n, t, s in rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if len(set(args.sizes)) > 1:
        n = np.array([r[0] for r in rows], dtype=float)
        s = np.array([r[2] for r in rows])
        log.info("log-log slope %.3f", np.polyfit(np.log(n), np.log(s), 1)[0])
    return 0


def _sizes(text):
    try:
        sizes = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or min(sizes) < 2:
        raise argparse.ArgumentTypeError("sizes must be integers >= 2")
    return sizes


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tangentflats",
        description="Approximate sampled manifolds by flats grouped by tangent similarity.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=_positive, default=1)

    p = sub.add_parser("generate", help="sample a synthetic manifold")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("--n", type=_positive, default=5000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=["csv", "raw-f64"], default=None)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("approximate", help="cluster samples and fit one flat per cluster")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["csv", "raw-f64"], default=None)
    p.add_argument("--k", type=_positive, default=15)
    p.add_argument("--clusters", type=_positive, required=True)
    p.add_argument("--dim", type=_positive, required=True)
    p.add_argument("--mode", choices=["bound", "exact"], default="bound")
    p.add_argument("--output", required=True, help="directory for labels, flats and manifest")
    p.add_argument("--debug", action="store_true", help="check connectivity after every merge")
    common(p)
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("evaluate", help="recompute MSRE from saved labels and flats")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["csv", "raw-f64"], default=None)
    p.add_argument("--labels", required=True)
    p.add_argument("--flats", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="flat-feature nearest-neighbor classification on IDX data")
    p.add_argument("--train-images", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-images", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--flats-per-class", type=_positive, default=10)
    p.add_argument("--k", type=_positive, default=20)
    p.add_argument("--dim", type=_positive, default=4)
    p.add_argument("--mode", choices=["bound", "exact"], default="bound")
    p.add_argument("--cap-per-class", type=_positive, default=2000)
    p.add_argument("--test-per-class", type=_positive, default=1000)
    p.add_argument("--pca-dims", type=_positive, default=100)
    p.add_argument("--output", required=True, help="directory for report, predictions and model")
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("bench", help="time clustering on growing Swiss rolls")
    p.add_argument("--sizes", type=_sizes, default=[500, 1000, 2000, 4000])
    p.add_argument("--trials", type=_positive, default=1)
    p.add_argument("--k", type=_positive, default=15)
    p.add_argument("--clusters", type=_positive, default=10)
    p.add_argument("--dim", type=_positive, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--mode", choices=["bound", "exact"], default="bound")
    p.add_argument("--output", default=None)
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "noise", 0.0) < 0:
        parser.error("--noise must be non-negative")
    try:
        return args.func(args)
    except InfeasibleClusteringError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except (UsageError, DataFormatError, ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
