"""Command-line pipeline: gen-data, train, encode, index, query, eval,
baseline-onehot and report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import DataError, SemhashError, __version__
from . import data as io_
from .encoder import Mlp, NumericError, TrainConfig, encode_dataset, train, train_classifier
from .index import HashCode, HashCodeSet, MihIndex, linear_scan_knn
from .metrics import (MetricReport, binary_entropy, build_run, flat_hit_at_k, hp_curve, mahp_at_k,
                      map_at_k, mean_kendall_tau)
from .semantics import EmbeddingDistances, LabelDistances

log = logging.getLogger("semhash")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
CONFIG_KEYS = sorted(set(io_.SyntheticSpec.keys()) | set(TrainConfig.keys()))
METRICS = ("map", "mahp", "kendall", "flat_hit", "entropy")


class UsageError(SemhashError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _csv_list(text, cast=str):
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


def _typed(cls, values: dict) -> dict:
    """Cast config strings to the field types of a dataclass default."""
    proto = cls()
    out = {}
    for key, raw in values.items():
        if not hasattr(proto, key):
            continue
        cur = getattr(proto, key)
        try:
            if isinstance(cur, bool):
                out[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(cur, int):
                out[key] = int(raw)
            elif isinstance(cur, float):
                out[key] = float(raw)
            else:
                out[key] = raw
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from None
    return out


def _load_config(args) -> dict:
    return io_.read_config(args.config, CONFIG_KEYS) if getattr(args, "config", None) else {}


def _overrides(args, names) -> dict:
    return {n: str(getattr(args, n)) for n in names if getattr(args, n, None) is not None}


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(args):
    values = _load_config(args)
    values.update(_overrides(args, ["seed"]))
    try:
        spec = io_.SyntheticSpec(**_typed(io_.SyntheticSpec, values))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = io_.generate_synthetic(spec)
    io_.write_table(out / "features.semb", d.features)
    io_.write_labels(out / "labels.txt", d.labels)
    io_.write_taxonomy(out / "taxonomy.tsv", d.taxonomy)
    if not args.no_captions:
        io_.write_table(out / "captions.semb", d.captions.vectors)
    print(f"wrote {len(d.features)} records, {len(d.leaf_means)} leaf classes to {out}")


def _load_labels(path, n):
    labels = io_.read_labels(path)
    if len(labels) != n:
        raise DataError(f"{path}: {len(labels)} labels for {n} records")
    return labels


def cmd_train(args):
    values = _load_config(args)
    values.update(_overrides(args, ["seed", "epochs", "losses", "lambda1", "lambda2", "alpha",
                                    "code_dim", "batch_size", "hidden", "target_size"]))
    if args.lr is not None:
        values["learning_rate"] = str(args.lr)
    try:
        cfg = TrainConfig(**_typed(TrainConfig, values))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    x = io_.read_table(args.features).vectors
    labels = _load_labels(args.labels, len(x)) if args.labels else None
    flags = set(cfg.losses)

    distances = None
    if "sim" in flags:
        if args.embeddings:
            emb = io_.read_table(args.embeddings)
            if len(emb) != len(x):
                raise DataError(f"{args.embeddings}: {len(emb)} rows for {len(x)} records")
            distances = EmbeddingDistances(emb)
        elif labels is not None and (args.taxonomy or args.binary_targets):
            tax = io_.read_taxonomy(args.taxonomy) if args.taxonomy else None
            if tax is not None:
                missing = sorted(set(labels) - set(tax.nodes))
                if missing:
                    raise DataError(f"labels not in taxonomy: {missing[:5]}")
            distances = LabelDistances(tax, labels, binary=args.binary_targets)
        else:
            raise UsageError("the sim loss needs --embeddings, or --labels with --taxonomy/--binary-targets")
    class_ids = None
    if "class" in flags:
        if labels is None:
            raise UsageError("the class loss needs --labels")
        class_ids = np.unique(labels, return_inverse=True)[1]
    reg_targets = None
    if "reg" in flags:
        if not args.embeddings:
            raise UsageError("the reg loss needs --embeddings")
        reg_targets = io_.read_table(args.embeddings).vectors

    model = Mlp.init([x.shape[1], *cfg.hidden, cfg.code_dim], cfg.seed)
    res = train(model, x, cfg, distances, class_ids, reg_targets, log_every=args.log_every)
    io_.write_model(args.out, model)
    if args.trace:
        with open(args.trace, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["epoch", "total", "sim", "kl", "aux"], lineterminator="\n")
            w.writeheader()
            for row in res.trace:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if args.plot and res.trace:
        from .plotting import plot_loss_trace
        plot_loss_trace(res.trace, args.plot)
    if res.skipped:
        print(f"skipped {res.skipped} degenerate batches", file=sys.stderr)
    last = res.trace[-1]["total"] if res.trace else float("nan")
    print(f"trained {cfg.epochs} epochs, final loss {last:.6g}; model written to {args.out}")


def cmd_encode(args):
    model = io_.read_model(args.model)
    x = io_.read_table(args.features).vectors
    if x.shape[1] != model.in_dim:
        raise DataError(f"features have {x.shape[1]} columns, model expects {model.in_dim}")
    codes, z = encode_dataset(model, x)
    if not np.all(np.isfinite(z)):
        raise NumericError("encoder produced non-finite outputs")
    io_.write_codes(args.codes, codes)
    if args.floats:
        io_.write_table(args.floats, z)
    print(f"encoded {len(codes)} records into {codes.code_dim}-bit codes")


def cmd_index(args):
    codes = io_.read_codes(args.codes)
    idx = MihIndex(codes, args.m)
    sizes = [len(t.keys) for t in idx.tables]
    print(f"codes: {len(codes)}  bits: {codes.code_dim}  substrings: {idx.m}")
    print("widths: " + ",".join(map(str, idx.widths)))
    print("distinct keys per table: " + ",".join(map(str, sizes)))


def cmd_query(args):
    codes = io_.read_codes(args.codes)
    if (args.id is None) == (args.vector is None):
        raise UsageError("give exactly one of --id or --vector")
    if args.id is not None:
        try:
            q = codes[codes.position_of(args.id)]
        except KeyError as exc:
            raise DataError(str(exc)) from None
    else:
        try:
            q = HashCode.from_string(args.vector)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if q.code_dim != codes.code_dim:
            raise DataError(f"query has {q.code_dim} bits, codes have {codes.code_dim}")
    if args.linear_scan:
        ids, dist = linear_scan_knn(codes, q, args.k)
    else:
        ids, dist = MihIndex(codes, args.m).query_knn(q, args.k)
    print("rank,id,distance")
    for r, (i, d) in enumerate(zip(ids, dist), 1):
        print(f"{r},{i},{d}")


def _semantics(args, n):
    labels = _load_labels(args.labels, n) if args.labels else None
    tax = io_.read_taxonomy(args.taxonomy) if args.taxonomy else None
    emb = None
    if args.embeddings:
        emb = io_.read_table(args.embeddings).vectors
        if len(emb) != n:
            raise DataError(f"{args.embeddings}: {len(emb)} rows for {n} records")
    if labels is None and emb is None:
        raise UsageError("eval needs --labels or --embeddings")
    if tax is not None and labels is not None:
        missing = sorted(set(labels) - set(tax.nodes))
        if missing:
            raise DataError(f"labels not in taxonomy: {missing[:5]}")
    return labels, tax, emb


def evaluate(database, k, labels, taxonomy, embeddings, metrics, method="mih",
             hit_ks=(1, 5, 10), entropy_sample=None, seed=0, prefix=""):
    """Run retrieval for every database item and collect the requested metrics."""
    run = build_run(database, k, labels=labels, taxonomy=taxonomy, embeddings=embeddings, method=method)
    rep = MetricReport()
    if "map" in metrics and labels is not None:
        rep.add(prefix + "map", k, map_at_k(run, k))
    if "mahp" in metrics:
        rep.add(prefix + "mahp", k, mahp_at_k(run, k))
    if "kendall" in metrics and embeddings is not None:
        rep.add(prefix + "kendall_tau", k, mean_kendall_tau(run, k))
    if "flat_hit" in metrics and labels is not None:
        for K in hit_ks:
            rep.add(prefix + "flat_hit", K, flat_hit_at_k(run, K))
    if "entropy" in metrics and isinstance(database, HashCodeSet):
        rep.add(prefix + "binary_entropy", None, binary_entropy(database, entropy_sample, seed))
    return rep, hp_curve(run, k)


def _write_outputs(args, rep, curve, name):
    text = rep.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(rep.pretty(), file=sys.stderr if not args.out else sys.stdout)
    if args.curve:
        with open(args.curve, "w") as f:
            f.write("k,hp\n")
            for j, v in enumerate(curve, 1):
                f.write(f"{j},{v!r}\n")
    if args.plot:
        from .plotting import plot_hp_curves
        plot_hp_curves({name: curve}, args.plot)


def cmd_eval(args):
    if (args.codes is None) == (args.floats is None):
        raise UsageError("give exactly one of --codes or --floats")
    metrics = _csv_list(args.metrics)
    bad = set(metrics) - set(METRICS)
    if bad:
        raise UsageError(f"unknown metrics {sorted(bad)}; choose from {','.join(METRICS)}")
    if args.codes:
        database = io_.read_codes(args.codes)
        n = len(database)
    else:
        database = io_.read_table(args.floats).vectors
        n = len(database)
    labels, tax, emb = _semantics(args, n)
    rep, curve = evaluate(database, args.k, labels, tax, emb, metrics,
                          method="linear" if args.linear_scan else "mih",
                          hit_ks=_csv_list(args.hit_k, int), entropy_sample=args.entropy_sample,
                          seed=args.seed)
    _write_outputs(args, rep, curve, Path(args.codes or args.floats).stem)


def onehot_codes(predicted, classes=None) -> HashCodeSet:
    classes = sorted(set(predicted)) if classes is None else list(classes)
    col = {c: i for i, c in enumerate(classes)}
    bits = np.zeros((len(predicted), len(classes)), dtype=bool)
    bits[np.arange(len(predicted)), [col[p] for p in predicted]] = True
    return HashCodeSet.from_bits(bits)


def cmd_baseline_onehot(args):
    labels = io_.read_labels(args.labels)
    tax = io_.read_taxonomy(args.taxonomy)
    classes = sorted(set(labels))
    if args.predictions:
        predicted = _load_labels(args.predictions, len(labels))
    elif args.features:
        x = io_.read_table(args.features).vectors
        if len(x) != len(labels):
            raise DataError(f"{args.features}: {len(x)} rows for {len(labels)} labels")
        ids = np.unique(labels, return_inverse=True)[1]
        cfg = TrainConfig(epochs=args.epochs, losses="class", seed=args.seed,
                          learning_rate=args.lr if args.lr is not None else 5e-3,
                          batch_size=args.batch_size)
        clf = train_classifier(x, ids, cfg)
        from .encoder import forward
        predicted = np.array(classes)[np.argmax(forward(clf, x)[0], axis=1)]
    else:
        predicted = labels
    unknown = sorted(set(predicted) - set(classes))
    if unknown:
        raise DataError(f"predicted classes not among the labels: {unknown[:5]}")
    codes = onehot_codes(predicted, classes)
    rep, curve = evaluate(codes, args.k, labels, tax, None, ["map", "mahp", "flat_hit", "entropy"],
                          hit_ks=_csv_list(args.hit_k, int), entropy_sample=args.entropy_sample,
                          seed=args.seed)
    rep.add("accuracy", None, float(np.mean(predicted == labels)))
    _write_outputs(args, rep, curve, "one-hot")


def cmd_report(args):
    table = {}
    order = []
    for path in args.inputs:
        try:
            rep = MetricReport.from_csv(Path(path).read_text())
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        name = Path(path).stem
        if name in table:
            name = str(path)
        table[name] = {}
        for metric, k, v in rep.rows:
            key = metric if k is None else f"{metric}@{k}"
            table[name][key] = v
            if key not in order:
                order.append(key)
    runs = list(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric"] + runs)
    for key in order:
        w.writerow([key] + ["" if key not in table[r] else repr(table[r][key]) for r in runs])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    width = max(len(k) for k in order) if order else 6
    colw = max([len(r) for r in runs] + [10])
    print(f"{'metric':<{width}}  " + "  ".join(f"{r:>{colw}}" for r in runs))
    for key in order:
        cells = [f"{table[r][key]:>{colw}.4f}" if key in table[r] else " " * colw for r in runs]
        print(f"{key:<{width}}  " + "  ".join(cells))
    if args.plot:
        from .plotting import plot_report_comparison
        plot_report_comparison(table, args.plot)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semhash", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic hierarchical dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--no-captions", action="store_true", help="skip the caption embedding table")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an encoder")
    t.add_argument("--features", required=True)
    t.add_argument("--labels")
    t.add_argument("--taxonomy")
    t.add_argument("--embeddings", help="caption embeddings: sim targets and reg targets")
    t.add_argument("--binary-targets", action="store_true", help="0/1 same-label target distances")
    t.add_argument("--out", required=True, help="model checkpoint path")
    t.add_argument("--trace", help="per-epoch loss CSV")
    t.add_argument("--plot", help="loss-trace figure path")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--losses", help="comma list from sim,kl,class,reg")
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--code-dim", dest="code_dim", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--hidden", help="comma list of hidden widths")
    t.add_argument("--target-size", dest="target_size", type=int)
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="embed features and binarize")
    e.add_argument("--model", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--codes", required=True, help="output SHSH code file")
    e.add_argument("--floats", help="output SEMB float embeddings")
    e.set_defaults(func=cmd_encode)

    i = sub.add_parser("index", help="build a multi-index over a code file and summarise it")
    i.add_argument("--codes", required=True)
    i.add_argument("--m", type=int)
    i.set_defaults(func=cmd_index)

    q = sub.add_parser("query", help="k nearest codes in Hamming distance")
    q.add_argument("--codes", required=True)
    q.add_argument("--id", type=int)
    q.add_argument("--vector", help="query bits as a 0/1 string")
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--m", type=int)
    q.add_argument("--linear-scan", action="store_true")
    q.set_defaults(func=cmd_query)

    def eval_outputs(sp):
        sp.add_argument("--k", type=int, default=50)
        sp.add_argument("--hit-k", default="1,5,10")
        sp.add_argument("--entropy-sample", type=int)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="metric CSV (name,k,value); stdout if omitted")
        sp.add_argument("--curve", help="HP@k curve CSV")
        sp.add_argument("--plot", help="HP@k curve figure")

    v = sub.add_parser("eval", help="retrieval metrics for codes or float embeddings")
    v.add_argument("--codes")
    v.add_argument("--floats")
    v.add_argument("--labels")
    v.add_argument("--taxonomy")
    v.add_argument("--embeddings")
    v.add_argument("--metrics", default="map,mahp,flat_hit,entropy")
    v.add_argument("--linear-scan", action="store_true")
    eval_outputs(v)
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline-onehot", help="evaluate one-hot class codes")
    b.add_argument("--labels", required=True)
    b.add_argument("--taxonomy", required=True)
    b.add_argument("--predictions", help="predicted label per record")
    b.add_argument("--features", help="train a classifier on these to get predictions")
    b.add_argument("--epochs", type=int, default=100)
    b.add_argument("--lr", type=float)
    b.add_argument("--batch-size", dest="batch_size", type=int, default=128)
    eval_outputs(b)
    b.set_defaults(func=cmd_baseline_onehot)

    r = sub.add_parser("report", help="merge metric CSVs into one table")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out")
    r.add_argument("--plot")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"semhash: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"semhash: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, KeyError) as exc:
        print(f"semhash: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SemhashError as exc:
        print(f"semhash: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
