"""Stage timing, evaluation reports and plot-data CSV dumps."""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from tda.errors import ValidationError
from tda.metrics import balanced_accuracy, confusion, f1, pr_auc, roc_auc

REPORT_SCHEMA_VERSION = 1
METRICS = ("balanced_accuracy", "f1", "pr_auc", "roc_auc")


def timed(stage_name, computation, timings=None):
    """Run ``computation()``; returns ``(result, seconds)``.

    If ``timings`` is given the elapsed time is added under ``stage_name``.
    """
    start = time.perf_counter()
    result = computation()
    seconds = time.perf_counter() - start
    if timings is not None:
        timings[stage_name] = timings.get(stage_name, 0.0) + seconds
    return result, seconds


class StageClock:
    """Accumulates wall-clock seconds per named stage of one run."""

    def __init__(self):
        self._start = time.perf_counter()
        self._stages = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self._stages[name] = self._stages.get(name, 0.0) + time.perf_counter() - start

    def run(self, name, fn, *args, **kwargs):
        with self.stage(name):
            return fn(*args, **kwargs)

    def timings(self):
        out = dict(self._stages)
        out["total"] = time.perf_counter() - self._start
        return out


@dataclass
class EvalReport:
    balanced_accuracy: Optional[float]
    f1: Optional[float]
    pr_auc: Optional[float]
    roc_auc: Optional[float]
    confusion: Optional[tuple]
    timings: dict = field(default_factory=dict)
    run_metadata: dict = field(default_factory=dict)

    def metrics(self):
        return {k: getattr(self, k) for k in METRICS}

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        d["confusion"] = None if self.confusion is None else dict(zip(("tp", "fp", "tn", "fn"), self.confusion))
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _metric_set(labels, scores, truth):
    return {
        "balanced_accuracy": balanced_accuracy(labels, truth),
        "f1": f1(labels, truth),
        "pr_auc": pr_auc(scores, truth),
        "roc_auc": roc_auc(scores, truth),
    }


def emit_report(run, truth=None, datasets=None) -> EvalReport:
    """Metrics for a SoftLabelRun against optional ground truth.

    Fused runs are scored on their labels, with the fraction of outlier
    votes as the continuous score. Baseline runs average each metric over
    their individual detectors (labels and raw scores per detector).
    """
    meta = {
        "method": run.method,
        "datasets": list(datasets) if datasets else sorted({p["dataset"] for p in run.provenance}),
        "config_digest": run.config_digest,
        "evaluation": run.evaluation,
        "score": "vote_fraction" if run.evaluation == "fused" else "detector_scores",
        "n_voters": int(run.votes.shape[0]),
    }
    if truth is None:
        return EvalReport(None, None, None, None, None, dict(run.timings), meta)
    truth = np.asarray(truth)
    try:
        if run.evaluation == "fused":
            values = _metric_set(run.labels, run.vote_fraction(), truth)
        else:
            per = [_metric_set(v, s, truth) for v, s in zip(run.votes, run.scores)]
            values = {k: float(np.mean([p[k] for p in per])) for k in METRICS}
        cm = confusion(run.labels, truth)
    except ValidationError as exc:
        raise ValidationError(f"evaluating {run.method}: {exc}") from None
    return EvalReport(**values, confusion=cm, timings=dict(run.timings), run_metadata=meta)


# ---------------------------------------------------------------------------
# CSV emission


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_report_rows(records, path):
    """Per-(dataset, method) metric rows; ``records`` holds (dataset, method, report or error)."""
    rows = []
    for dataset, method, rep in records:
        if isinstance(rep, EvalReport):
            rows.append([dataset, method, "ok", *[_fmt(rep.metrics()[k]) for k in METRICS],
                         _fmt(rep.timings.get("total"))])
        else:
            rows.append([dataset, method, f"failed: {rep}", "", "", "", "", ""])
    _write_rows(path, ["dataset", "method", "status", *METRICS, "seconds"], rows)


def summarize(records):
    """Mean metrics per method over the successful datasets, plus failure counts."""
    methods = []
    for _, method, _ in records:
        if method not in methods:
            methods.append(method)
    out = []
    for method in methods:
        ok = [r for _, m, r in records if m == method and isinstance(r, EvalReport)]
        failed = sum(1 for _, m, r in records if m == method and not isinstance(r, EvalReport))
        row = {"method": method, "n_datasets": len(ok), "n_failed": failed}
        for k in METRICS:
            row[k] = float(np.mean([r.metrics()[k] for r in ok])) if ok else None
        row["minutes"] = float(np.mean([r.timings.get("total", 0.0) for r in ok]) / 60.0) if ok else None
        out.append(row)
    return out


def write_summary_csv(summary, path):
    header = ["method", *METRICS, "minutes", "n_datasets", "n_failed"]
    rows = [[s["method"], *[_fmt(s[k]) for k in METRICS], _fmt(s["minutes"]), s["n_datasets"], s["n_failed"]]
            for s in summary]
    _write_rows(path, header, rows)


def similarity_score(sad_value):
    """Map SAD to a similarity in (0, 1]; identical curves give 1."""
    return 1.0 / (1.0 + float(sad_value))


def write_similarity_csv(pairs, path):
    """``pairs`` of (sad, balanced_accuracy); similarity is 1 / (1 + SAD)."""
    _write_rows(path, ["similarity", "balanced_accuracy"],
                [[repr(similarity_score(s)), repr(float(b))] for s, b in pairs])


def write_stage_csv(runs, path):
    """Per-stage seconds; ``runs`` is an iterable of (method, timings dict)."""
    rows = []
    for method, timings in runs:
        for stage, seconds in timings.items():
            if stage != "total":
                rows.append([stage, repr(float(seconds)), method])
    _write_rows(path, ["stage", "seconds", "method"], rows)
