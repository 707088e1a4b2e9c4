"""Command-line entry point: ``tda index|rank|label|benchmark|eval``.

Exit codes: 0 success, 2 usage or validation error, 3 fallback
exhaustion, 4 internal numeric failure. ``TDA_LOG=debug|info`` turns on
diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from tda.dataset import load_csv
from tda.errors import ExhaustionError, TdaError, ValidationError
from tda.index import (
    PublicIndex,
    atomic_write_text,
    build_index,
    load_index,
    load_manifest,
    register_dataset,
    save_index,
)
from tda.pipeline import (
    AVG_OD,
    BEST_OD,
    DEFAULT_OD,
    TIE_POLICIES,
    TOP1_DS,
    TOPN_DS,
    DetectorCache,
    PipelineConfig,
    SoftLabelRun,
    run_method,
)
from tda.report import (
    emit_report,
    summarize,
    write_report_rows,
    write_similarity_csv,
    write_stage_csv,
    write_summary_csv,
)
from tda.similarity import rank_similar
from tda.transcoder import TranscoderConfig

log = logging.getLogger("tda")

METHOD_NAMES = {
    "top1": TOP1_DS,
    "topn": TOPN_DS,
    "default_od": DEFAULT_OD,
    "avg_od": AVG_OD,
    "best_od": BEST_OD,
}


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _method_list(text):
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    unknown = [n for n in names if n not in METHOD_NAMES]
    if not names or unknown:
        raise argparse.ArgumentTypeError(
            f"methods must be a comma list of {', '.join(METHOD_NAMES)}; got {text!r}"
        )
    return list(dict.fromkeys(names))


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=_nonneg_int, default=0, help="root seed for every stochastic stage")
    p.add_argument("--threads", type=_positive_int, default=1, help="parallel candidate transformations")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    return p


def _pipeline_flags(p):
    p.add_argument("--m", type=_positive_int, default=3, help="Top1-DS: detectors of the best dataset")
    p.add_argument("--n", type=_positive_int, default=3, help="TopN-DS: number of datasets")
    p.add_argument("--epochs", type=_nonneg_int, default=None, help="transcoder epochs (default 1000)")
    p.add_argument("--tie-policy", choices=TIE_POLICIES, default="inlier")
    p.add_argument("--max-fallbacks", type=_positive_int, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="tda", description="Soft labels for unlabeled tabular data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build, extend or inspect the public index")
    isub = p_index.add_subparsers(dest="action", required=True)
    b = isub.add_parser("build", parents=[common], help="index every manifest in a directory")
    b.add_argument("--manifests", required=True)
    b.add_argument("--index", required=True, help="index file to write")
    a = isub.add_parser("add", parents=[common], help="add one manifest to an index")
    a.add_argument("--index", required=True)
    a.add_argument("--manifest", required=True)
    s = isub.add_parser("show", parents=[common], help="list entries")
    s.add_argument("--index", required=True)

    r = sub.add_parser("rank", parents=[common], help="rank public datasets by curve SAD")
    r.add_argument("--private", required=True)
    r.add_argument("--index", required=True)
    r.add_argument("--top", type=_positive_int, default=None)
    r.add_argument("--label-column", default=None, help="column to drop from the private table")

    lab = sub.add_parser("label", parents=[common], help="generate soft labels")
    lab.add_argument("--private", required=True)
    lab.add_argument("--index", required=True)
    lab.add_argument("--method", choices=("top1", "topn"), required=True)
    lab.add_argument("--label-column", default=None, help="column to drop from the private table")
    _pipeline_flags(lab)

    bm = sub.add_parser("benchmark", parents=[common], help="leave-one-out evaluation")
    bm.add_argument("--datasets", required=True, help="directory of labeled dataset manifests")
    bm.add_argument("--index", default=None, help="public index (default: the datasets themselves)")
    bm.add_argument("--methods", type=_method_list, default=["top1", "default_od"])
    _pipeline_flags(bm)

    ev = sub.add_parser("eval", parents=[common], help="score a saved run against ground truth")
    ev.add_argument("--run", required=True, help="run JSON written by 'tda label'")
    ev.add_argument("--truth", required=True, help="CSV holding the ground-truth column")
    ev.add_argument("--label-column", default="label")
    return parser


def _config(args) -> PipelineConfig:
    tc = TranscoderConfig()
    if args.epochs is not None:
        tc.epochs = args.epochs
    return PipelineConfig(
        m=args.m, n=args.n, tie_policy=args.tie_policy, max_fallbacks=args.max_fallbacks,
        seed=args.seed, transcoder_config=tc, threads=args.threads,
    )


def _require_file(path, what):
    if not Path(path).is_file():
        raise ValidationError(f"{what} not found: {path}")


def _emit(text, out):
    if out:
        atomic_write_text(Path(out), text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _out_dir(args):
    if not args.out:
        raise ValidationError("--out <dir> is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_index(args):
    if args.action == "build":
        index = build_index(args.manifests)
        save_index(index, args.index)
        print(f"indexed {len(index)} dataset(s) into {args.index}")
        return 0

    if args.action == "add":
        _require_file(args.manifest, "manifest")
        path = Path(args.index)
        index = load_index(path) if path.exists() else PublicIndex()
        entry = load_manifest(args.manifest)
        index = register_dataset(index, entry)
        save_index(index, path)
        print(f"added {entry.dataset_name}; index version {index.version}")
        return 0

    _require_file(args.index, "index")
    index = load_index(args.index)
    if len(index) == 0:
        raise ValidationError("empty index")
    if args.format == "json":
        doc = {
            "version": index.version,
            "entries": [
                {
                    "name": e.dataset_name, "n_samples": e.n_samples, "n_features": e.n_features,
                    "n_outliers": e.n_outliers, "curve_head": e.curve.to_list()[:5],
                    "best_models": [m.to_dict() for m in e.best_models],
                }
                for e in index
            ],
        }
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
    else:
        rows = []
        for e in index:
            c = e.curve.errors
            best = ";".join(f"{m.spec.label()}={m.metric_value:.4f}" for m in e.best_models)
            rows.append([e.dataset_name, e.n_samples, e.n_features, e.n_outliers,
                         f"{c[0]:.6g}", f"{c[min(9, len(c) - 1)]:.6g}", best])
        _emit(_csv_text(["dataset", "n_samples", "n_features", "n_outliers",
                         "curve_k1", "curve_k10", "best_models"], rows), args.out)
    return 0


def cmd_rank(args):
    _require_file(args.private, "private dataset")
    _require_file(args.index, "index")
    prv = load_csv(args.private, args.label_column).unlabeled()
    index = load_index(args.index)
    ranking = rank_similar(prv, index)
    if args.top is not None:
        ranking = ranking[:args.top]
    if args.format == "json":
        doc = [{"rank": i + 1, "dataset": e.dataset_name, "sad": s} for i, (e, s) in enumerate(ranking)]
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
    else:
        rows = [[i + 1, e.dataset_name, repr(float(s))] for i, (e, s) in enumerate(ranking)]
        _emit(_csv_text(["rank", "dataset", "sad"], rows), args.out)
    return 0


def _run_doc(run: SoftLabelRun, cfg: PipelineConfig):
    # timings are excluded so identical inputs give byte-identical files
    doc = run.to_dict(include_timings=False)
    doc["config"] = cfg.to_dict()
    doc["config"].pop("threads")
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_label(args):
    _require_file(args.private, "private dataset")
    _require_file(args.index, "index")
    cfg = _config(args)
    out = _out_dir(args)
    prv = load_csv(args.private, args.label_column).unlabeled()
    index = load_index(args.index)
    method = METHOD_NAMES[args.method]
    for stale in ("labels.csv", "run.json", "timings.csv", "trail.json"):
        (out / stale).unlink(missing_ok=True)
    try:
        run = run_method(method, prv, index, cfg)
    except ExhaustionError as exc:
        doc = {"method": method, "error": str(exc), "fallback_trail": exc.trail,
               "partial": exc.partial, "config_digest": cfg.digest()}
        atomic_write_text(out / "trail.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
        raise

    atomic_write_text(out / "labels.csv", _csv_text(["label"], [[int(v)] for v in run.labels]))
    atomic_write_text(out / "run.json", _run_doc(run, cfg))
    write_stage_csv([(method, run.timings)], out / "timings.csv")
    print(f"{method}: {int(run.labels.sum())} of {run.n_samples} samples labeled outlier -> {out}")
    return 0


def _read_truth(path, column):
    _require_file(path, "truth file")
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValidationError(f"{path}: column {column!r} not in header")
        values = []
        for row_no, row in enumerate(reader, start=1):
            raw = (row[column] or "").strip()
            if raw not in ("0", "1", "0.0", "1.0"):
                raise ValidationError(f"{path}: row {row_no}, column {column!r}: {raw!r} is not 0 or 1")
            values.append(int(float(raw)))
    return np.array(values, dtype=np.int64)


def cmd_eval(args):
    _require_file(args.run, "run file")
    doc = json.loads(Path(args.run).read_text(encoding="utf-8"))
    try:
        run = SoftLabelRun.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{args.run}: not a run document ({exc})") from None
    truth = _read_truth(args.truth, args.label_column)
    if truth.shape != run.labels.shape:
        raise ValidationError(f"truth has {truth.shape[0]} rows, run has {run.n_samples}")
    rep = emit_report(run, truth)
    if args.format == "json":
        _emit(rep.to_json() + "\n", args.out)
    else:
        m = rep.metrics()
        _emit(_csv_text(["metric", "value"], [[k, repr(v)] for k, v in m.items()]), args.out)
    return 0


def _winner_sad(run):
    for step in run.fallback_trail:
        if step["success"]:
            return step["sad"]
    return None


def cmd_benchmark(args):
    cfg = _config(args)
    out = _out_dir(args)
    datasets = build_index(args.datasets)
    if len(datasets) == 0:
        raise ValidationError(f"no manifests in {args.datasets}")
    index = load_index(args.index) if args.index else datasets
    methods = [METHOD_NAMES[m] for m in args.methods]
    cache = DetectorCache()

    records, pairs, stage_totals, reports = [], [], {}, []
    for entry in datasets:
        public = index.without(entry.dataset_name)
        for method in methods:
            try:
                prv = entry.load()
                run = run_method(method, prv, public, cfg, cache)
                rep = emit_report(run, prv.labels, datasets=[entry.dataset_name])
            except TdaError as exc:
                log.warning("%s / %s failed: %s", entry.dataset_name, method, exc)
                records.append((entry.dataset_name, method, str(exc)))
                continue
            records.append((entry.dataset_name, method, rep))
            reports.append({"dataset": entry.dataset_name, **rep.to_dict()})
            if method == TOP1_DS and _winner_sad(run) is not None:
                pairs.append((_winner_sad(run), rep.balanced_accuracy))
            totals = stage_totals.setdefault(method, {})
            for stage, sec in run.timings.items():
                totals[stage] = totals.get(stage, 0.0) + sec

    summary = summarize(records)
    write_report_rows(records, out / "per_dataset.csv")
    write_summary_csv(summary, out / "summary.csv")
    write_similarity_csv(pairs, out / "similarity.csv")
    write_stage_csv(stage_totals.items(), out / "stages.csv")
    doc = {"config_digest": cfg.digest(), "summary": summary, "reports": reports,
           "failures": [{"dataset": d, "method": m, "error": r} for d, m, r in records if isinstance(r, str)]}
    atomic_write_text(out / "benchmark.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    n_failed = len(doc["failures"])
    print(f"benchmark: {len(datasets)} dataset(s) x {len(methods)} method(s), {n_failed} failure(s) -> {out}")
    return 0


COMMANDS = {
    "index": cmd_index,
    "rank": cmd_rank,
    "label": cmd_label,
    "benchmark": cmd_benchmark,
    "eval": cmd_eval,
}


def _setup_logging():
    level = os.environ.get("TDA_LOG", "").strip().lower()
    if level in ("debug", "info"):
        logging.basicConfig(level=getattr(logging, level.upper()), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except TdaError as exc:
        print(f"tda: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tda: error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"tda: numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
