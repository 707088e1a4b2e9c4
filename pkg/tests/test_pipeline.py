import numpy as np
import pytest

from tda.dataset import TabularDataset
from tda.errors import ExhaustionError, ValidationError
from tda.index import PublicIndex
from tda.metrics import balanced_accuracy, pr_auc
from tda.pipeline import (
    BEST_OD,
    PipelineConfig,
    SoftLabelRun,
    baseline_avg_od,
    baseline_best_od,
    baseline_default_od,
    best_models_for,
    label_with_candidate,
    majority_vote,
    method1_top1,
    method2_topn,
    run_method,
)
from tda.transcoder import TranscoderConfig

from _synth import entry, planted, row_permuted


def cfg(**kw):
    kw.setdefault("transcoder_config", TranscoderConfig(epochs=5))
    return PipelineConfig(**kw)


@pytest.fixture(scope="module")
def private():
    return planted(0, n_in=400, n_out=10, d=30, name="prv")


def knn(ds, name):
    return entry(ds, "KNN", {"n_neighbors": 5}, name=name)


def test_majority_vote_examples():
    V = np.array([[1, 0, 1, 0], [1, 1, 0, 0], [0, 1, 1, 0]])
    np.testing.assert_array_equal(majority_vote(V), [1, 1, 1, 0])
    even = np.array([[1, 0], [0, 0]])
    np.testing.assert_array_equal(majority_vote(even, "inlier"), [0, 0])
    np.testing.assert_array_equal(majority_vote(even, "outlier"), [1, 0])
    np.testing.assert_array_equal(majority_vote([1, 0, 1]), [1, 0, 1])
    with pytest.raises(ValidationError):
        majority_vote(V, "coin")


def test_self_match_labels_perfectly(private):
    index = PublicIndex((knn(private, "copy"),))
    run = method1_top1(private.unlabeled(), index, cfg(m=1))
    assert run.fallback_trail[0]["status"] == "identical"
    assert balanced_accuracy(run.labels, private.labels) == 1.0
    np.testing.assert_array_equal(run.labels, majority_vote(run.votes, run.tie_policy))


def test_fallback_after_failed_candidate(private):
    # the permuted copy ties at SAD ~0 and wins on name order, but its curve
    # equals the private one up to round-off, so strict DS-Diff cannot pass
    index = PublicIndex((knn(row_permuted(private, 1, "a_perm"), "a_perm"), knn(private, "b_copy")))
    run = method1_top1(private.unlabeled(), index, cfg(m=1))
    assert [(t["dataset"], t["success"]) for t in run.fallback_trail] == [("a_perm", False), ("b_copy", True)]
    assert run.fallback_trail[0]["ds_diff_public"] < 1e-12
    assert run.provenance[0]["dataset"] == "b_copy"
    ranked = [r["dataset"] for r in run.ranking]
    assert ranked[:len(run.fallback_trail)] == [t["dataset"] for t in run.fallback_trail]


def test_top1_exhaustion_carries_trail(private):
    index = PublicIndex((knn(row_permuted(private, 1, "p1"), "p1"), knn(row_permuted(private, 2, "p2"), "p2")))
    with pytest.raises(ExhaustionError) as info:
        method1_top1(private.unlabeled(), index, cfg(m=1))
    assert [t["dataset"] for t in info.value.trail] == ["p1", "p2"]
    assert info.value.exit_code == 3
    with pytest.raises(ExhaustionError) as info:
        method1_top1(private.unlabeled(), index, cfg(m=1, max_fallbacks=1))
    assert len(info.value.trail) == 1


def test_topn_single_equals_top1(private):
    index = PublicIndex((knn(private, "copy"), knn(planted(5, 300, 6, 30, name="other"), "other")))
    a = method1_top1(private.unlabeled(), index, cfg(m=1))
    b = method2_topn(private.unlabeled(), index, cfg(n=1))
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.votes, b.votes)
    assert a.provenance == b.provenance


def test_topn_three_copies(private):
    index = PublicIndex(tuple(knn(private, f"c{i}") for i in range(3)))
    run = method2_topn(private.unlabeled(), index, cfg(n=3))
    assert run.votes.shape == (3, private.n_samples)
    assert [p["dataset"] for p in run.provenance] == ["c0", "c1", "c2"]
    assert balanced_accuracy(run.labels, private.labels) == 1.0


def test_topn_exhaustion_partial(private):
    index = PublicIndex((knn(private, "b_copy"), knn(row_permuted(private, 3, "a_perm"), "a_perm")))
    with pytest.raises(ExhaustionError) as info:
        method2_topn(private.unlabeled(), index, cfg(n=2))
    partial = info.value.partial
    assert [p["dataset"] for p in partial["provenance"]] == ["b_copy"]
    assert len(partial["votes"]) == 1 and len(partial["fallback_trail"]) == 2
    with pytest.raises(ValidationError, match="exceeds the index size"):
        method2_topn(private.unlabeled(), index, cfg(n=3))


def test_thread_count_does_not_change_results(private):
    index = PublicIndex((knn(row_permuted(private, 1, "a_perm"), "a_perm"),
                         knn(row_permuted(private, 2, "b_perm"), "b_perm"), knn(private, "c_copy")))
    one = method1_top1(private.unlabeled(), index, cfg(m=1, threads=1))
    two = method1_top1(private.unlabeled(), index, cfg(m=1, threads=2))
    assert one.to_dict(include_timings=False) == two.to_dict(include_timings=False)
    assert len(two.fallback_trail) == 3


def test_transfer_is_deterministic():
    rng = np.random.default_rng(4)
    prv = TabularDataset("prv", rng.standard_normal((200, 6)))
    pub = planted(6, 250, 8, 9, name="pub")
    e = knn(pub, "pub")
    a = label_with_candidate(prv, e, cfg(m=1, seed=11))
    b = label_with_candidate(prv, e, cfg(m=1, seed=11))
    assert a.to_dict(include_timings=False) == b.to_dict(include_timings=False)
    assert a.n_samples == 200


def test_config_validation():
    for bad in (dict(m=0), dict(n=0), dict(tie_policy="x"), dict(max_fallbacks=0),
                dict(baseline_contamination=1.0), dict(threads=0)):
        with pytest.raises(ValidationError):
            PipelineConfig(**bad)
    assert PipelineConfig(threads=1).digest() == PipelineConfig(threads=4).digest()
    assert PipelineConfig(seed=1).digest() != PipelineConfig(seed=2).digest()


def test_m_larger_than_stored_models(private):
    with pytest.raises(ValidationError, match="exceeds"):
        method1_top1(private.unlabeled(), PublicIndex((knn(private, "copy"),)), cfg(m=2))


@pytest.fixture(scope="module")
def small():
    return planted(7, n_in=150, n_out=8, d=5, dist=6.0, name="small")


def test_best_od_at_least_default_od(small):
    c = cfg()
    best = baseline_best_od(small, c)
    default = baseline_default_od(small.unlabeled(), c)
    assert best.method == BEST_OD and best.evaluation == "fused"
    assert default.evaluation == "mean_over_voters"
    per_voter = [pr_auc(s, small.labels) for s in default.scores]
    assert best.provenance[0]["pr_auc"] >= max(per_voter)
    np.testing.assert_allclose(best.provenance[0]["pr_auc"], pr_auc(best.scores[0], small.labels), atol=1e-12)


def test_baselines_skip_unfittable_configs():
    rng = np.random.default_rng(8)
    tiny = TabularDataset("tiny", rng.standard_normal((40, 3)))
    run = baseline_avg_od(tiny, cfg())
    reasons = {s["detector"]["algorithm"]: s["reason"] for s in run.skipped}
    assert "KNN" in reasons and "n must exceed k" in reasons["KNN"]
    assert run.votes.shape[0] + len(run.skipped) == 24
    np.testing.assert_array_equal(run.labels, majority_vote(run.votes, run.tie_policy))
    assert all(v.sum() == 4 for v in run.votes)


def test_best_od_needs_labels(small):
    with pytest.raises(ValidationError, match="ground-truth labels"):
        baseline_best_od(small.unlabeled(), cfg())
    with pytest.raises(ValidationError, match="unknown method"):
        run_method("NOPE", small, PublicIndex(), cfg())


def test_soft_label_run_round_trip(private):
    run = method1_top1(private.unlabeled(), PublicIndex((knn(private, "copy"),)), cfg(m=1))
    back = SoftLabelRun.from_dict(run.to_dict())
    assert back.to_dict() == run.to_dict()
    np.testing.assert_array_equal(back.scores, run.scores)


def test_best_models_for_ranks_by_pr_auc(small):
    models = best_models_for(small, seed=0)
    values = [m.metric_value for m in models]
    assert values == sorted(values, reverse=True)
    assert len(models) == 24
    assert best_models_for(small, seed=0, top=3) == models[:3]
    with pytest.raises(ValidationError):
        best_models_for(small.unlabeled())
