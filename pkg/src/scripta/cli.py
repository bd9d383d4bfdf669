"""Command-line pipeline driver.

Subcommands cover the full workflow: ``extract`` (manifest to feature
store), ``train`` (store to model plus history report), ``eval`` (layer-wise
accuracy of a model against gallery/probe stores), ``crossval`` (grouped
cross-validation from a manifest), ``crossdomain`` (nearest-neighbour
transfer onto a foreign gallery), and ``report`` (re-render saved report
files).  Every run is a pure function of its inputs, flags, and seed, so
repeating a command reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset, evalrep, metricknn, mlp
from .errors import ScriptaError
from .srslbp import DEFAULT_RADII, DEFAULT_ZONES

SEED_ENV = "SCRIPTA_SEED"

SPLIT_CHOICES = ("all", "train", "val", "test", "trainval")


def parse_radii(text: str) -> tuple[int, ...]:
    """Radii flag syntax: a range ``1..12`` or a list ``1,2,5``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            radii = tuple(range(int(lo), int(hi) + 1))
        else:
            radii = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"radii must look like '1..12' or '1,2,5', got {text!r}"
        ) from exc
    if not radii:
        raise argparse.ArgumentTypeError(f"empty radii specification {text!r}")
    return radii


def parse_hidden(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"hidden sizes must look like '1024,512', got {text!r}"
        ) from exc
    return sizes


def resolve_seed(flag_value: int | None) -> int:
    """Seed precedence: explicit flag, then SCRIPTA_SEED, then 0."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ScriptaError(
                f"{SEED_ENV} must be an integer, got {env!r}"
            ) from exc
    return 0


def _records_for_split(manifest: dataset.Manifest, split: str):
    if split == "all":
        return manifest.records
    if split == "trainval":
        return manifest.subset(("train", "val"))
    return manifest.subset((split,))


def _add_extraction_flags(p: argparse.ArgumentParser):
    p.add_argument("--zones", choices=("three-halves", "global"),
                   default=DEFAULT_ZONES, help="pooling layout")
    p.add_argument("--radii", type=parse_radii, default=DEFAULT_RADII,
                   metavar="SPEC", help="ring radii, '1..12' or '1,2,5'")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="extraction worker processes")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01, help="SGD learning rate")
    p.add_argument("--dropout-keep", type=float, default=0.5,
                   help="hidden unit keep probability")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="fraction of samples held out for the history")
    p.add_argument("--batch-scale", type=float, default=1.0,
                   help="scales the samples-per-class batch size rule")
    p.add_argument("--hidden", type=parse_hidden, default=(1024, 512),
                   metavar="SIZES", help="hidden layer widths, e.g. '1024,512'")
    p.add_argument("--output-activation", choices=("softmax", "logistic"),
                   default="softmax")


def _add_knn_flags(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int, default=1, help="number of neighbours")
    p.add_argument("--metric", choices=("euclidean", "cosine"),
                   default="euclidean")


def _seed_flag(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (default: ${SEED_ENV} or 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scripta",
        description="Texture-based script identification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="manifest -> feature store")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--split", choices=SPLIT_CHOICES, default="all",
                   help="which manifest rows to extract")
    p.add_argument("--out", required=True, type=Path)
    _add_extraction_flags(p)

    p = sub.add_parser("train", help="feature store -> model + history")
    p.add_argument("--features", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    _add_train_flags(p)
    _seed_flag(p)

    p = sub.add_parser("eval", help="layer-wise evaluation of a model")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--gallery", required=True, type=Path,
                   help="feature store backing the neighbour search")
    p.add_argument("--probes", required=True, type=Path,
                   help="feature store to classify")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="probe batches evaluated in parallel")
    _add_knn_flags(p)

    p = sub.add_parser("crossval", help="grouped cross-validation")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--folds", type=int, default=None,
                   help="fold count (default: one per group)")
    p.add_argument("--route", choices=metricknn.EVAL_ROUTES, default="output",
                   help="which prediction route feeds the pooled report")
    p.add_argument("--out-dir", required=True, type=Path)
    _add_extraction_flags(p)
    _add_train_flags(p)
    _add_knn_flags(p)
    _seed_flag(p)

    p = sub.add_parser("crossdomain", help="transfer onto a foreign gallery")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--gallery", required=True, type=Path)
    p.add_argument("--probes", required=True, type=Path)
    p.add_argument("--layer", type=int, choices=(1, 2), default=1,
                   help="hidden layer used as embedding")
    p.add_argument("--out-dir", required=True, type=Path)
    _add_knn_flags(p)

    p = sub.add_parser("report", help="re-render saved report files")
    p.add_argument("--confusion", type=Path, default=None,
                   help="a confusion.csv to re-render")
    p.add_argument("--history", type=Path, default=None,
                   help="a history.csv to re-render")
    p.add_argument("--out-dir", required=True, type=Path)

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_extract(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    records = _records_for_split(manifest, args.split)
    if not records:
        raise ScriptaError(
            f"manifest {args.manifest} has no rows for split {args.split!r}"
        )
    store = dataset.extract_store(
        manifest, records, radii=args.radii, zones=args.zones,
        workers=args.workers,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    dataset.write_features(store, args.out)
    print(f"wrote {store.n_samples}x{store.dim} store to {args.out}")
    return 0


def _train_once(store, args, seed):
    model = mlp.init_model(
        store.dim,
        store.class_list,
        seed=seed,
        hidden_sizes=args.hidden,
        output_activation=args.output_activation,
    )
    cfg = mlp.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        dropout_keep=args.dropout_keep,
        validation_fraction=args.val_fraction,
        batch_scale=args.batch_scale,
        seed=seed,
    )
    return mlp.train(model, store, cfg)


def cmd_train(args) -> int:
    store = dataset.read_features(args.features)
    seed = resolve_seed(args.seed)
    trained, history = _train_once(store, args, seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    model_path = args.out_dir / "model.smlp"
    mlp.save_model(trained, model_path)
    evalrep.render_report(history, os.path.join(args.out_dir, ""))
    final = history.output_error[-1]
    print(f"wrote {model_path} (final validation error {final:.4f})")
    return 0


def _probe_slice(probes, idx):
    return dataset.FeatureStore(
        probes.features[idx], probes.labels[idx], probes.class_list,
        probes.radii, probes.zones,
    )


def _layerwise_chunk(payload):
    model, gallery, chunk, k, metric = payload
    return metricknn.evaluate_layerwise(model, gallery, chunk, k=k, metric=metric)


def _evaluate_layerwise_pooled(model, gallery, probes, k, metric, workers):
    """Layer-wise predictions, optionally fanned out over probe chunks."""
    n = probes.n_samples
    if workers <= 1 or n < 2 * workers:
        return metricknn.evaluate_layerwise(
            model, gallery, probes, k=k, metric=metric
        )
    jobs = [
        (model, gallery, _probe_slice(probes, idx), k, metric)
        for idx in np.array_split(np.arange(n), workers)
        if idx.size
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_layerwise_chunk, jobs))
    return {
        route: np.concatenate([p[route] for p in parts])
        for route in metricknn.EVAL_ROUTES
    }


def cmd_eval(args) -> int:
    model = mlp.load_model(args.model)
    gallery = dataset.read_features(args.gallery)
    probes = dataset.read_features(args.probes)
    preds = _evaluate_layerwise_pooled(
        model, gallery, probes, args.k, args.metric, args.workers
    )
    true = probes.label_names()
    class_list = tuple(
        sorted(set(probes.class_list) | set(gallery.class_list)
               | set(model.class_list))
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for route in metricknn.EVAL_ROUTES:
        report = evalrep.summarize(
            evalrep.confusion(true, preds[route], class_list)
        )
        evalrep.render_report(
            report, os.path.join(args.out_dir, f"{route}-")
        )
        rows.append((route, report.n_samples, report.overall_accuracy))
        print(f"{route}: accuracy {report.overall_accuracy:.4f}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["route", "n_samples", "accuracy"])
    for route, n, acc in rows:
        w.writerow([route, n, repr(acc)])
    (args.out_dir / "layerwise.csv").write_text(buf.getvalue(), encoding="utf-8")
    return 0


def cmd_crossval(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    store = dataset.extract_store(
        manifest, radii=args.radii, zones=args.zones, workers=args.workers
    )
    folds = dataset.make_group_folds(manifest.records, args.folds)
    seed = resolve_seed(args.seed)
    reports, names = [], []
    for i, fold in enumerate(folds):
        sub = {}
        for part, idx in (("train", fold.train_indices),
                          ("test", fold.test_indices)):
            sub[part] = dataset.FeatureStore(
                store.features[idx],
                store.labels[idx],
                store.class_list,
                store.radii,
                store.zones,
            )
        trained, _ = _train_once(sub["train"], args, seed + i)
        preds = metricknn.evaluate_layerwise(
            trained, sub["train"], sub["test"], k=args.k, metric=args.metric
        )[args.route]
        true = sub["test"].label_names()
        reports.append(
            evalrep.summarize(evalrep.confusion(true, preds, store.class_list))
        )
        names.append("+".join(fold.groups))
        print(
            f"fold {i + 1}/{len(folds)} [{names[-1]}]: "
            f"accuracy {reports[-1].overall_accuracy:.4f}"
        )
    pooled = evalrep.aggregate_folds(reports, names=names)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    evalrep.render_report(pooled, os.path.join(args.out_dir, ""))
    print(
        f"pooled over {pooled.n_samples} samples: "
        f"accuracy {pooled.overall_accuracy:.4f}"
    )
    return 0


def cmd_crossdomain(args) -> int:
    model = mlp.load_model(args.model)
    gallery = dataset.read_features(args.gallery)
    probes = dataset.read_features(args.probes)
    res = metricknn.cross_domain_eval(
        model, gallery, probes, layer=args.layer, k=args.k, metric=args.metric
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "seen", "support", "accuracy"])
    for row in res.per_class:
        w.writerow(
            [row.name, "true" if row.seen else "false", row.support,
             repr(row.accuracy)]
        )
    for label, value in (("seen-average", res.seen_average),
                         ("unseen-average", res.unseen_average)):
        w.writerow([label, "", "", "" if value is None else repr(value)])
    (args.out_dir / "crossdomain.csv").write_text(
        buf.getvalue(), encoding="utf-8"
    )
    true = probes.label_names()
    class_list = tuple(sorted(set(true) | set(res.predictions.tolist())))
    report = evalrep.summarize(
        evalrep.confusion(true, res.predictions, class_list)
    )
    evalrep.render_report(report, os.path.join(args.out_dir, ""))
    for label, value in (("seen", res.seen_average),
                         ("unseen", res.unseen_average)):
        if value is not None:
            print(f"{label} classes: average accuracy {value:.4f}")
    return 0


def cmd_report(args) -> int:
    if args.confusion is None and args.history is None:
        raise ScriptaError("report needs --confusion and/or --history")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    prefix = os.path.join(args.out_dir, "")
    if args.confusion is not None:
        cm = evalrep.read_confusion_csv(args.confusion)
        evalrep.render_report(evalrep.summarize(cm), prefix)
        print(f"re-rendered {args.confusion}")
    if args.history is not None:
        hist = evalrep.read_history_csv(args.history)
        evalrep.render_report(hist, prefix)
        print(f"re-rendered {args.history}")
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "crossdomain": cmd_crossdomain,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScriptaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
