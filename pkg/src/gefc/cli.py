"""Command-line entry points: train, predict, robustness, curves, transfer-test."""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys

import numpy as np

from . import circuit, evaluation, forest, robustness
from .dataset import DataTable, DatasetError, load_csv, train_test_split
from .model_io import TrainedModel, load_model, save_model

DEFAULT_SEED = 2020
DEFAULT_TREES = 30
DEFAULT_TEST_FRACTION = 0.3


class CliError(Exception):
    pass


def _hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _accuracy(labels_true, labels_pred) -> float:
    return float(np.mean(np.asarray(labels_true) == np.asarray(labels_pred)))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    table = load_csv(args.data, sidecar=args.schema, target=args.target)
    if args.test_fraction > 0:
        train, test = train_test_split(table, args.test_fraction, args.seed)
    else:
        train, test = table, None
    mtry = args.mtry if args.mtry else forest.default_mtry(train.m)
    rf = forest.fit_forest(train, n_trees=args.trees, mtry=mtry, seed=args.seed)
    config = circuit.LeafConfig(alpha=args.alpha, truncation=not args.no_truncation)
    gef = circuit.convert_forest(rf, train, config)
    provenance = {
        "seed": args.seed,
        "n_trees": args.trees,
        "mtry": mtry,
        "test_fraction": args.test_fraction,
        "dataset_hash": _hash_file(args.data),
    }
    save_model(TrainedModel(rf, gef, provenance), args.out)
    print(f"model written to {args.out} ({args.trees} trees, mtry={mtry}, seed={args.seed})")

    def report(name, tbl: DataTable):
        rf_pred = forest.predict_table(rf, tbl, aggregation=args.rf_aggregation)
        gef_pred = np.array([circuit.predict(gef, x) for x in tbl.X])
        print(f"{name}: rf accuracy {_accuracy(tbl.labels, rf_pred):.4f}, "
              f"circuit accuracy {_accuracy(tbl.labels, gef_pred):.4f} (n={tbl.n})")

    report("train", train)
    if test is not None:
        report("test", test)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    table = load_csv(args.data, schema=model.schema, allow_missing=True, require_labels=False)
    rows = []
    for i, x in enumerate(table.X):
        lj = circuit.log_joint_per_class(model.circuit, x)
        label = int(np.argmax(lj))
        post = circuit.posterior(model.circuit, x)[label]
        log_px = circuit.log_marginal(model.circuit, x)
        rows.append([i, model.schema.decode_label(label), _fmt(float(post)), _fmt(float(log_px))])
    if args.out:
        _write_csv(args.out, ["row", "label", "posterior", "log_px"], rows)
        print(f"{len(rows)} predictions written to {args.out}")
    else:
        print("row,label,posterior,log_px")
        for r in rows:
            print(",".join(str(v) for v in r))
    return 0


def cmd_robustness(args) -> int:
    model = load_model(args.model)
    table = load_csv(args.data, schema=model.schema, require_labels=False)
    spec = robustness.ContaminationSpec(contaminate_root_mixture=args.contaminate_root)
    results = [robustness.robustness_epsilon(model.circuit, x, args.tol, spec)
               for x in table.X]
    rows = [[i, model.schema.decode_label(r.predicted_label), _fmt(r.epsilon_star),
             r.iterations, r.certified]
            for i, r in enumerate(results)]
    if args.out:
        _write_csv(args.out, ["row", "label", "epsilon_star", "iterations", "certified"], rows)
        print(f"{len(rows)} robustness scores written to {args.out}")
    eps = evaluation.ScoreSeries(np.array([r.epsilon_star for r in results]),
                                 np.arange(table.n))
    lowest, highest = evaluation.rank_extremes(eps, args.k)
    print(f"lowest-eps rows: {', '.join(str(i) for i in lowest)}")
    print(f"highest-eps rows: {', '.join(str(i) for i in highest)}")
    if args.curves_out:
        if table.y is None:
            raise CliError("curves need labeled data")
        points = evaluation.robustness_accuracy_curves(
            model.circuit, table, _parse_grid(args.grid), args.min_bucket, args.tol, spec,
            precomputed=(eps.scores, [r.predicted_label for r in results]))
        _write_curves(args.curves_out, points)
    return 0


def _write_curves(path, points) -> None:
    _write_csv(path, ["threshold", "acc_below", "acc_above", "n_below", "n_above"],
               [[_fmt(p.threshold), _fmt(p.acc_below), _fmt(p.acc_above), p.n_below, p.n_above]
                for p in points])
    print(f"curve data written to {path}")


def cmd_curves(args) -> int:
    model = load_model(args.model)
    table = load_csv(args.data, schema=model.schema)
    spec = robustness.ContaminationSpec(contaminate_root_mixture=args.contaminate_root)
    points = evaluation.robustness_accuracy_curves(
        model.circuit, table, _parse_grid(args.grid), args.min_bucket, args.tol, spec)
    _write_curves(args.out, points)
    return 0


def cmd_transfer_test(args) -> int:
    model = load_model(args.model)
    in_table = load_csv(args.in_domain, schema=model.schema, require_labels=False)
    out_table = load_csv(args.out_domain, schema=model.schema, require_labels=False)

    in_logp = evaluation.outlier_scores(model.circuit, in_table, "in-domain")
    out_logp = evaluation.outlier_scores(model.circuit, out_table, "out-of-domain")
    in_conf = evaluation.confidence_scores(model.circuit, in_table, "in-domain")
    out_conf = evaluation.confidence_scores(model.circuit, out_table, "out-of-domain")

    kde_train_path = args.train_data or args.in_domain
    kde_train = load_csv(kde_train_path, schema=model.schema, require_labels=False)
    kde = evaluation.kde_fit(kde_train)
    in_kde = evaluation.kde_scores(kde, in_table, "in-domain")
    out_kde = evaluation.kde_scores(kde, out_table, "out-of-domain")

    report = [
        ("log_px", evaluation.roc_auc(in_logp.scores, out_logp.scores)),
        ("confidence", evaluation.roc_auc(in_conf.scores, out_conf.scores)),
        ("kde", evaluation.roc_auc(in_kde.scores, out_kde.scores)),
    ]
    for name, auc in report:
        print(f"AUC[{name}] = {auc:.4f} (in-domain as positives)")
    if args.out:
        _write_csv(args.out, ["signal", "auc"], [[n, _fmt(a)] for n, a in report])
        print(f"report written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _parse_grid(text: str) -> np.ndarray:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(f"bad grid {text!r}; use start:stop:step or a comma list")
        start, stop, step = (float(p) for p in parts)
        return np.round(np.arange(start, stop + step / 2, step), 10)
    return np.array([float(p) for p in text.split(",")])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gefc",
                                description="Generative forest toolkit: train, classify, "
                                            "detect outliers, score prediction robustness.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a forest and write its circuit model")
    t.add_argument("--data", required=True)
    t.add_argument("--schema", default=None, help="sidecar schema file")
    t.add_argument("--target", default=None, help="class column name (default: last)")
    t.add_argument("--trees", type=int, default=DEFAULT_TREES)
    t.add_argument("--mtry", type=int, default=0, help="features per split (default: ceil sqrt m)")
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION,
                   help="holdout fraction; 0 trains on everything")
    t.add_argument("--alpha", type=float, default=1.0, help="additive smoothing")
    t.add_argument("--no-truncation", action="store_true",
                   help="skip renormalizing leaf Normals over their cells")
    t.add_argument("--rf-aggregation", choices=["vote", "prob"], default="vote")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="per-row label, posterior, and log p(x)")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_predict)

    rb = sub.add_parser("robustness", help="per-row epsilon-robustness scores")
    rb.add_argument("--model", required=True)
    rb.add_argument("--data", required=True)
    rb.add_argument("--tol", type=float, default=1e-3)
    rb.add_argument("--k", type=int, default=10, help="extreme rows to list")
    rb.add_argument("--contaminate-root", action=argparse.BooleanOptionalAction, default=True)
    rb.add_argument("--grid", default="0:1:0.05")
    rb.add_argument("--min-bucket", type=int, default=30)
    rb.add_argument("--out", default=None)
    rb.add_argument("--curves-out", default=None)
    rb.set_defaults(func=cmd_robustness)

    cv = sub.add_parser("curves", help="accuracy above/below robustness thresholds")
    cv.add_argument("--model", required=True)
    cv.add_argument("--data", required=True)
    cv.add_argument("--grid", default="0:1:0.05")
    cv.add_argument("--min-bucket", type=int, default=30)
    cv.add_argument("--tol", type=float, default=1e-3)
    cv.add_argument("--contaminate-root", action=argparse.BooleanOptionalAction, default=True)
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=cmd_curves)

    tt = sub.add_parser("transfer-test", help="outlier-detection AUC report on two domains")
    tt.add_argument("--model", required=True)
    tt.add_argument("--in-domain", required=True)
    tt.add_argument("--out-domain", required=True)
    tt.add_argument("--train-data", default=None,
                    help="rows for the KDE baseline (default: the in-domain file)")
    tt.add_argument("--out", default=None)
    tt.set_defaults(func=cmd_transfer_test)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
