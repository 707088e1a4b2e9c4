"""Soft-label generation: Top1-DS, TopN-DS and the detector baselines.

Both transfer methods rank the public index by curve similarity, translate
the private rows into a candidate's feature space, keep the candidate only
if the crossover passes the DS-Diff check, and fuse binary votes of the
candidate's detectors by majority.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from tda.dataset import TabularDataset, normalized
from tda.errors import DivergenceError, ExhaustionError, ValidationError
from tda.index import BestModel
from tda.metrics import pr_auc
from tda.report import StageClock
from tda.seeding import derive_seed, digest
from tda.similarity import rank_similar
from tda.transcoder import (
    TranscoderConfig,
    crossover,
    ds_diff,
    init_transcoder,
    train,
)
from tda.zoo import ALGORITHMS, default_grid, fit, threshold_labels

log = logging.getLogger(__name__)

TOP1_DS, TOPN_DS = "TOP1_DS", "TOPN_DS"
AVG_OD, DEFAULT_OD, BEST_OD = "AVG_OD", "DEFAULT_OD", "BEST_OD"
METHODS = (TOP1_DS, TOPN_DS, AVG_OD, DEFAULT_OD, BEST_OD)
TIE_POLICIES = ("inlier", "outlier")


@dataclass
class PipelineConfig:
    m: int = 3
    n: int = 3
    tie_policy: str = "inlier"
    max_fallbacks: Optional[int] = None
    seed: int = 0
    transcoder_config: TranscoderConfig = field(default_factory=TranscoderConfig)
    baseline_contamination: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.transcoder_config, dict):
            self.transcoder_config = TranscoderConfig.from_dict(self.transcoder_config)
        if int(self.m) < 1 or int(self.n) < 1:
            raise ValidationError(f"m and n must be >= 1, got m={self.m}, n={self.n}")
        if self.tie_policy not in TIE_POLICIES:
            raise ValidationError(f"tie_policy must be one of {TIE_POLICIES}, got {self.tie_policy!r}")
        if self.max_fallbacks is not None and int(self.max_fallbacks) < 1:
            raise ValidationError("max_fallbacks must be >= 1")
        if not 0 < self.baseline_contamination < 1:
            raise ValidationError("baseline_contamination must lie in (0, 1)")
        if int(self.threads) < 1:
            raise ValidationError("threads must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["transcoder_config"] = self.transcoder_config.to_dict()
        return d

    def digest(self):
        # thread count never changes results, so it is left out of the digest
        d = self.to_dict()
        d.pop("threads")
        return digest(d)


@dataclass
class SoftLabelRun:
    """Fused labels plus everything needed to recompute and audit them.

    ``votes`` and ``scores`` hold one row per voter, aligned with
    ``provenance``. ``evaluation`` says whether metrics are computed on the
    fused labels ("fused") or averaged over voters ("mean_over_voters").
    """

    method: str
    labels: np.ndarray
    votes: np.ndarray
    scores: np.ndarray
    provenance: list
    tie_policy: str = "inlier"
    timings: dict = field(default_factory=dict)
    fallback_trail: list = field(default_factory=list)
    ranking: list = field(default_factory=list)
    config_digest: str = ""
    evaluation: str = "fused"
    skipped: list = field(default_factory=list)

    @property
    def n_samples(self):
        return self.labels.shape[0]

    def vote_fraction(self):
        return self.votes.mean(axis=0)

    def to_dict(self, include_timings=True):
        d = {
            "method": self.method,
            "labels": [int(v) for v in self.labels],
            "votes": self.votes.astype(int).tolist(),
            "scores": [[float(v) for v in row] for row in self.scores],
            "provenance": self.provenance,
            "tie_policy": self.tie_policy,
            "fallback_trail": self.fallback_trail,
            "ranking": self.ranking,
            "config_digest": self.config_digest,
            "evaluation": self.evaluation,
            "skipped": self.skipped,
        }
        if include_timings:
            d["timings"] = dict(self.timings)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            method=d["method"],
            labels=np.asarray(d["labels"], dtype=np.int64),
            votes=np.asarray(d["votes"], dtype=np.int64),
            scores=np.asarray(d["scores"], dtype=np.float64),
            provenance=d["provenance"],
            tie_policy=d.get("tie_policy", "inlier"),
            timings=d.get("timings", {}),
            fallback_trail=d.get("fallback_trail", []),
            ranking=d.get("ranking", []),
            config_digest=d.get("config_digest", ""),
            evaluation=d.get("evaluation", "fused"),
            skipped=d.get("skipped", []),
        )


def majority_vote(votes, tie_policy: str = "inlier") -> np.ndarray:
    """Per sample, 1 iff more than half of the voters say 1.

    Exact ties (even voter count) resolve to ``tie_policy``.
    """
    if tie_policy not in TIE_POLICIES:
        raise ValidationError(f"tie_policy must be one of {TIE_POLICIES}")
    V = np.atleast_2d(np.asarray(votes))
    if V.shape[0] < 1:
        raise ValidationError("majority vote needs at least one voter")
    ones = 2 * V.sum(axis=0)
    v = V.shape[0]
    out = (ones > v).astype(np.int64)
    if tie_policy == "outlier":
        out[ones == v] = 1
    return out


class DetectorCache:
    """Fitted public detectors keyed by (dataset, spec, seed)."""

    def __init__(self):
        self._store = {}

    def get(self, name, spec, X):
        key = (name, spec.algorithm, repr(sorted(spec.hyperparams.items())), spec.seed)
        if key not in self._store:
            self._store[key] = fit(spec, X)
        return self._store[key]


def detector_seed(cfg, dataset_name, spec):
    return derive_seed(cfg.seed, "detector", dataset_name, spec.label())


# ---------------------------------------------------------------------------
# transformation + prediction units


@dataclass
class Transformation:
    entry: object
    sad: float
    success: bool
    status: str
    crossover: Optional[np.ndarray] = None
    public: Optional[TabularDataset] = None
    ds_diff_public: Optional[float] = None
    ds_diff_crossover: Optional[float] = None
    error: Optional[str] = None
    seconds: float = 0.0

    def trail_entry(self):
        return {
            "dataset": self.entry.dataset_name,
            "success": bool(self.success),
            "status": self.status,
            "sad": float(self.sad),
            "ds_diff_public": self.ds_diff_public,
            "ds_diff_crossover": self.ds_diff_crossover,
            **({"error": self.error} if self.error else {}),
        }


def transform(prv: TabularDataset, entry, sad_score: float, cfg: PipelineConfig) -> Transformation:
    """Train a transcoder from ``prv`` (already z-scored) to ``entry`` and test the crossover.

    A public table equal to the private one after z-scoring needs no
    transcoder: the identity is used and counts as a success.
    """
    start = time.perf_counter()
    pub = normalized(entry.load())
    if pub.X.shape == prv.X.shape and np.array_equal(pub.X, prv.X):
        return Transformation(entry, sad_score, True, "identical", prv.X.copy(), pub,
                              0.0, 0.0, seconds=time.perf_counter() - start)

    tc = copy.deepcopy(cfg.transcoder_config)
    tc.seed = derive_seed(cfg.seed, "transcoder", entry.dataset_name)
    model = init_transcoder(tc, prv.n_features, pub.n_features)
    try:
        model, _ = train(model, prv.X, pub.X)
    except DivergenceError as exc:
        log.info("%s: transcoder diverged: %s", entry.dataset_name, exc)
        return Transformation(entry, sad_score, False, "diverged", public=pub, error=str(exc),
                              seconds=time.perf_counter() - start)
    co = crossover(model, prv.X)
    if not np.all(np.isfinite(co)):
        return Transformation(entry, sad_score, False, "diverged", public=pub,
                              error="non-finite crossover samples", seconds=time.perf_counter() - start)
    d_pub = ds_diff(prv, pub)
    d_co = ds_diff(prv, co)
    ok = d_pub > d_co
    log.info("%s: DS-Diff public %.4f crossover %.4f -> %s", entry.dataset_name, d_pub, d_co,
             "success" if ok else "failed")
    return Transformation(entry, sad_score, ok, "success" if ok else "failed", co, pub,
                          d_pub, d_co, seconds=time.perf_counter() - start)


def predict(t: Transformation, specs, cfg, cache=None):
    """Votes and raw scores of each public detector on the crossover samples."""
    name = t.entry.dataset_name
    votes, scores, provenance = [], [], []
    for spec in specs:
        spec = spec.with_seed(detector_seed(cfg, name, spec))
        det = cache.get(name, spec, t.public.X) if cache is not None else fit(spec, t.public.X)
        s = det.score(t.crossover)
        votes.append(threshold_labels(s, t.entry.outlier_fraction))
        scores.append(s)
        provenance.append({"dataset": name, "detector": spec.to_dict()})
    return votes, scores, provenance


def _candidates(prv, index, cfg, clock):
    ranking = clock.run("similarity", rank_similar, prv, index)
    limit = len(ranking) if cfg.max_fallbacks is None else min(len(ranking), int(cfg.max_fallbacks))
    return ranking, ranking[:limit]


def _ranking_doc(ranking):
    return [{"dataset": e.dataset_name, "sad": float(s)} for e, s in ranking]


def _walk(prv, candidates, cfg, needed, clock):
    """Transform candidates in ranking order until ``needed`` succeed.

    With ``cfg.threads > 1`` candidates are processed in parallel chunks;
    the trail is cut back to the sequential prefix, so results do not
    depend on the thread count.
    """
    done = []
    successes = 0
    width = max(1, int(cfg.threads))
    i = 0
    with clock.stage("transformation"):
        while i < len(candidates) and successes < needed:
            chunk = candidates[i:i + width]
            if width == 1:
                results = [transform(prv, e, s, cfg) for e, s in chunk]
            else:
                with ThreadPoolExecutor(max_workers=width) as pool:
                    results = list(pool.map(lambda es: transform(prv, es[0], es[1], cfg), chunk))
            for r in results:
                if successes >= needed:
                    break
                done.append(r)
                successes += r.success
            i += width
    return done


def _prepare(prv, index, cfg):
    if len(index) == 0:
        raise ValidationError("cannot label against an empty index")
    clock = StageClock()
    prv_norm = clock.run("normalization", lambda: normalized(prv.unlabeled()))
    return clock, prv_norm


def method1_top1(prv: TabularDataset, index, cfg: PipelineConfig, cache=None) -> SoftLabelRun:
    """Top1-DS: first candidate passing DS-Diff, labeled by its best ``m`` detectors."""
    clock, prv_norm = _prepare(prv, index, cfg)
    ranking, candidates = _candidates(prv_norm, index, cfg, clock)
    attempts = _walk(prv_norm, candidates, cfg, 1, clock)
    trail = [a.trail_entry() for a in attempts]
    winner = next((a for a in attempts if a.success), None)
    if winner is None:
        raise ExhaustionError(
            f"no transformation passed the DS-Diff check after {len(attempts)} candidate(s)", trail
        )
    if cfg.m > len(winner.entry.best_models):
        raise ValidationError(
            f"m={cfg.m} exceeds the {len(winner.entry.best_models)} best models of {winner.entry.dataset_name}"
        )
    specs = [bm.spec for bm in winner.entry.best_models[:cfg.m]]
    votes, scores, provenance = clock.run("prediction", predict, winner, specs, cfg, cache)
    labels = clock.run("fusion", majority_vote, np.array(votes), cfg.tie_policy)
    return SoftLabelRun(
        TOP1_DS, labels, np.array(votes), np.array(scores), provenance, cfg.tie_policy,
        clock.timings(), trail, _ranking_doc(ranking), cfg.digest(),
    )


def method2_topn(prv: TabularDataset, index, cfg: PipelineConfig, cache=None) -> SoftLabelRun:
    """TopN-DS: first ``n`` candidates passing DS-Diff, one best detector each."""
    if cfg.n > len(index):
        raise ValidationError(f"n={cfg.n} exceeds the index size {len(index)}")
    clock, prv_norm = _prepare(prv, index, cfg)
    ranking, candidates = _candidates(prv_norm, index, cfg, clock)
    attempts = _walk(prv_norm, candidates, cfg, cfg.n, clock)
    trail = [a.trail_entry() for a in attempts]
    winners = [a for a in attempts if a.success]

    votes, scores, provenance = [], [], []
    with clock.stage("prediction"):
        for w in winners:
            v, s, p = predict(w, [w.entry.best_models[0].spec], cfg, cache)
            votes += v
            scores += s
            provenance += p
    if len(winners) < cfg.n:
        partial = {"fallback_trail": trail, "provenance": provenance,
                   "votes": [v.tolist() for v in votes]}
        raise ExhaustionError(
            f"only {len(winners)} of {cfg.n} transformations passed the DS-Diff check", trail, partial
        )
    labels = clock.run("fusion", majority_vote, np.array(votes), cfg.tie_policy)
    return SoftLabelRun(
        TOPN_DS, labels, np.array(votes), np.array(scores), provenance, cfg.tie_policy,
        clock.timings(), trail, _ranking_doc(ranking), cfg.digest(),
    )


def label_with_candidate(prv: TabularDataset, entry, cfg: PipelineConfig, cache=None):
    """Transform into one given entry and label regardless of the DS-Diff outcome.

    Used to relate similarity to labeling quality; the trail still records
    whether the check passed. Returns ``None`` if training diverged.
    """
    clock, prv_norm = _prepare(prv, [entry], cfg)
    sad_score = clock.run("similarity", rank_similar, prv_norm, [entry])[0][1]
    with clock.stage("transformation"):
        t = transform(prv_norm, entry, sad_score, cfg)
    if t.crossover is None:
        return None
    specs = [bm.spec for bm in entry.best_models[:min(cfg.m, len(entry.best_models))]]
    votes, scores, provenance = clock.run("prediction", predict, t, specs, cfg, cache)
    labels = clock.run("fusion", majority_vote, np.array(votes), cfg.tie_policy)
    return SoftLabelRun(
        TOP1_DS, labels, np.array(votes), np.array(scores), provenance, cfg.tie_policy,
        clock.timings(), [t.trail_entry()], [{"dataset": entry.dataset_name, "sad": sad_score}],
        cfg.digest(),
    )


# ---------------------------------------------------------------------------
# baselines: detectors fitted directly on the private table


def _run_specs(prv_norm, specs, contamination, clock):
    votes, scores, provenance, skipped = [], [], [], []
    with clock.stage("detection"):
        for spec in specs:
            try:
                det = fit(spec, prv_norm.X)
            except ValidationError as exc:
                skipped.append({"detector": spec.to_dict(), "reason": str(exc)})
                continue
            s = det.score(prv_norm.X)
            votes.append(threshold_labels(s, contamination))
            scores.append(s)
            provenance.append({"dataset": prv_norm.name, "detector": spec.to_dict()})
    if not votes:
        raise ValidationError(f"{prv_norm.name}: no detector configuration could be fitted")
    return votes, scores, provenance, skipped


def _baseline(method, prv, specs, cfg, contamination):
    clock = StageClock()
    prv_norm = clock.run("normalization", lambda: normalized(prv.unlabeled()))
    votes, scores, provenance, skipped = _run_specs(prv_norm, specs, contamination, clock)
    labels = clock.run("fusion", majority_vote, np.array(votes), cfg.tie_policy)
    return SoftLabelRun(
        method, labels, np.array(votes), np.array(scores), provenance, cfg.tie_policy,
        clock.timings(), config_digest=cfg.digest(), evaluation="mean_over_voters", skipped=skipped,
    )


def _seeded(specs, cfg):
    return [s.with_seed(derive_seed(cfg.seed, "baseline", s.label())) for s in specs]


def baseline_default_od(prv: TabularDataset, cfg: PipelineConfig) -> SoftLabelRun:
    """Every zoo algorithm at its default (first grid) configuration."""
    specs = _seeded([default_grid(a)[0] for a in ALGORITHMS], cfg)
    return _baseline(DEFAULT_OD, prv, specs, cfg, cfg.baseline_contamination)


def baseline_avg_od(prv: TabularDataset, cfg: PipelineConfig) -> SoftLabelRun:
    """Every configuration of every algorithm's grid."""
    specs = _seeded([s for a in ALGORITHMS for s in default_grid(a)], cfg)
    return _baseline(AVG_OD, prv, specs, cfg, cfg.baseline_contamination)


def baseline_best_od(prv_labeled: TabularDataset, cfg: PipelineConfig) -> SoftLabelRun:
    """Supervised upper bound: the grid configuration with the highest PR-AUC.

    Per algorithm the best configuration is found against the ground truth;
    the overall winner's labels are returned. Thresholding uses the true
    outlier fraction, which this baseline is allowed to know.
    """
    if prv_labeled.labels is None:
        raise ValidationError("best-OD baseline needs ground-truth labels")
    truth = prv_labeled.labels
    contamination = prv_labeled.n_outliers / prv_labeled.n_samples
    if not 0 < contamination < 1:
        raise ValidationError("best-OD baseline needs both classes in the ground truth")
    clock = StageClock()
    prv_norm = clock.run("normalization", lambda: normalized(prv_labeled.unlabeled()))
    specs = _seeded([s for a in ALGORITHMS for s in default_grid(a)], cfg)
    votes, scores, provenance, skipped = _run_specs(prv_norm, specs, contamination, clock)
    with clock.stage("selection"):
        quality = [pr_auc(s, truth) for s in scores]
        per_algorithm = {}
        for i, p in enumerate(provenance):
            algo = p["detector"]["algorithm"]
            if algo not in per_algorithm or quality[i] > quality[per_algorithm[algo]]:
                per_algorithm[algo] = i
        best = max(per_algorithm.values(), key=lambda i: (quality[i], -i))
    labels = clock.run("fusion", majority_vote, votes[best][None, :], cfg.tie_policy)
    prov = dict(provenance[best], pr_auc=quality[best],
                per_algorithm_best={a: {"detector": provenance[i]["detector"], "pr_auc": quality[i]}
                                    for a, i in sorted(per_algorithm.items())})
    return SoftLabelRun(
        BEST_OD, labels, votes[best][None, :], scores[best][None, :], [prov], cfg.tie_policy,
        clock.timings(), config_digest=cfg.digest(), skipped=skipped,
    )


def run_method(method: str, prv: TabularDataset, index, cfg: PipelineConfig, cache=None) -> SoftLabelRun:
    if method == TOP1_DS:
        return method1_top1(prv, index, cfg, cache)
    if method == TOPN_DS:
        return method2_topn(prv, index, cfg, cache)
    if method == DEFAULT_OD:
        return baseline_default_od(prv, cfg)
    if method == AVG_OD:
        return baseline_avg_od(prv, cfg)
    if method == BEST_OD:
        return baseline_best_od(prv, cfg)
    raise ValidationError(f"unknown method {method!r}")


def best_models_for(ds: TabularDataset, seed: int = 0, top: Optional[int] = None):
    """Rank every grid configuration on a labeled public table by PR-AUC.

    This is how manifest ``best_models`` lists are produced; detectors that
    cannot be fitted on ``ds`` are left out.
    """
    if ds.labels is None:
        raise ValidationError(f"{ds.name}: ranking detectors needs labels")
    X = normalized(ds.unlabeled()).X
    found = []
    for algo in ALGORITHMS:
        for spec in default_grid(algo):
            spec = spec.with_seed(derive_seed(seed, "best_models", ds.name, spec.label()))
            try:
                s = fit(spec, X).score(X)
            except ValidationError:
                continue
            found.append(BestModel(spec, "pr_auc", pr_auc(s, ds.labels)))
    found.sort(key=lambda m: -m.metric_value)
    return found if top is None else found[:top]
