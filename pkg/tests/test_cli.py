import csv
import io
import json

import pytest

from tda.cli import main
from tda.dataset import write_csv

from _synth import planted, row_permuted, write_public


@pytest.fixture()
def world(tmp_path):
    """Three public datasets with manifests, plus a private copy of one of them."""
    sets = [planted(i, n_in=120, n_out=6, d=5, dist=7.0, name=name) for i, name in enumerate("abc")]
    for ds in sets:
        write_public(tmp_path / "data", ds, manifest_dir=tmp_path / "manifests")
    write_csv(sets[1], tmp_path / "private.csv")
    assert main(["index", "build", "--manifests", str(tmp_path / "manifests"),
                 "--index", str(tmp_path / "index.json")]) == 0
    return tmp_path, sets


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_index_build_and_show(world, capsys):
    tmp, _ = world
    capsys.readouterr()
    assert main(["index", "show", "--index", str(tmp / "index.json")]) == 0
    out = rows(capsys.readouterr().out)
    assert out[0][:4] == ["dataset", "n_samples", "n_features", "n_outliers"]
    assert [r[0] for r in out[1:]] == ["a", "b", "c"]
    assert main(["index", "show", "--index", str(tmp / "index.json"), "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [e["name"] for e in doc["entries"]] == ["a", "b", "c"]


def test_index_add_duplicate_and_new(world, capsys):
    tmp, sets = world
    assert main(["index", "add", "--index", str(tmp / "index.json"),
                 "--manifest", str(tmp / "manifests" / "a.json")]) == 2
    assert "duplicate dataset name 'a'" in capsys.readouterr().err
    m = write_public(tmp / "extra", planted(9, 80, 4, 5, name="d"))
    assert main(["index", "add", "--index", str(tmp / "index.json"), "--manifest", str(m)]) == 0
    assert "index version 2" in capsys.readouterr().out


def test_index_show_empty(tmp_path, capsys):
    (tmp_path / "m").mkdir()
    assert main(["index", "build", "--manifests", str(tmp_path / "m"), "--index", str(tmp_path / "i.json")]) == 0
    assert main(["index", "show", "--index", str(tmp_path / "i.json")]) == 2
    assert "empty index" in capsys.readouterr().err


def test_rank_self_first_and_top(world, capsys):
    tmp, _ = world
    capsys.readouterr()
    args = ["rank", "--private", str(tmp / "private.csv"), "--index", str(tmp / "index.json"),
            "--label-column", "label"]
    assert main(args) == 0
    out = rows(capsys.readouterr().out)
    assert out[0] == ["rank", "dataset", "sad"]
    assert out[1][1] == "b" and float(out[1][2]) < 1e-12
    assert len(out) == 4
    assert main(args + ["--top", "2"]) == 0
    assert len(rows(capsys.readouterr().out)) == 3


def test_label_writes_outputs_byte_identically(world):
    tmp, sets = world
    args = ["label", "--private", str(tmp / "private.csv"), "--index", str(tmp / "index.json"),
            "--label-column", "label", "--method", "top1", "--m", "1", "--epochs", "5", "--seed", "3"]
    assert main(args + ["--out", str(tmp / "r1")]) == 0
    assert main(args + ["--out", str(tmp / "r2")]) == 0
    labels = rows((tmp / "r1" / "labels.csv").read_text())
    assert labels[0] == ["label"] and len(labels) - 1 == sets[1].n_samples
    for name in ("labels.csv", "run.json"):
        assert (tmp / "r1" / name).read_bytes() == (tmp / "r2" / name).read_bytes()
    assert rows((tmp / "r1" / "timings.csv").read_text())[0] == ["stage", "seconds", "method"]
    assert not (tmp / "r1" / "trail.json").exists()


def test_label_exhaustion_writes_trail(tmp_path, capsys):
    prv = planted(0, n_in=120, n_out=6, d=5, dist=7.0, name="prv")
    write_public(tmp_path / "d", row_permuted(prv, 1, "perm"), manifest_dir=tmp_path / "m")
    write_csv(prv, tmp_path / "private.csv")
    assert main(["index", "build", "--manifests", str(tmp_path / "m"), "--index", str(tmp_path / "i.json")]) == 0
    code = main(["label", "--private", str(tmp_path / "private.csv"), "--index", str(tmp_path / "i.json"),
                 "--label-column", "label", "--method", "top1", "--m", "1", "--epochs", "5",
                 "--out", str(tmp_path / "out")])
    assert code == 3
    trail = json.loads((tmp_path / "out" / "trail.json").read_text())
    assert [t["dataset"] for t in trail["fallback_trail"]] == ["perm"]
    assert not (tmp_path / "out" / "labels.csv").exists()


def test_eval_scores_saved_run(world, capsys):
    tmp, _ = world
    assert main(["label", "--private", str(tmp / "private.csv"), "--index", str(tmp / "index.json"),
                 "--label-column", "label", "--method", "top1", "--m", "1", "--out", str(tmp / "r")]) == 0
    capsys.readouterr()
    assert main(["eval", "--run", str(tmp / "r" / "run.json"), "--truth", str(tmp / "private.csv")]) == 0
    out = dict(rows(capsys.readouterr().out)[1:])
    assert float(out["balanced_accuracy"]) == 1.0
    assert main(["eval", "--run", str(tmp / "r" / "run.json"), "--truth", str(tmp / "index.json")]) == 2


def test_benchmark_rows_and_failures_continue(world):
    tmp, _ = world
    # --m 2 exceeds the single stored detector, so every Top1-DS run fails
    assert main(["benchmark", "--datasets", str(tmp / "manifests"), "--methods", "top1,default_od",
                 "--m", "2", "--epochs", "5", "--out", str(tmp / "bench")]) == 0
    per = rows((tmp / "bench" / "per_dataset.csv").read_text())
    assert len(per) == 1 + 3 * 2
    status = {(r[0], r[1]): r[2] for r in per[1:]}
    assert all(status[(d, "DEFAULT_OD")] == "ok" for d in "abc")
    assert all(status[(d, "TOP1_DS")].startswith("failed") for d in "abc")
    summary = rows((tmp / "bench" / "summary.csv").read_text())
    assert [r[0] for r in summary[1:]] == ["TOP1_DS", "DEFAULT_OD"]
    for name in ("similarity.csv", "stages.csv", "benchmark.json"):
        assert (tmp / "bench" / name).exists()


def test_usage_errors(tmp_path, capsys):
    assert main(["rank", "--private", str(tmp_path / "nope.csv"), "--index", "x"]) == 2
    assert main(["label", "--private", "p", "--index", "i", "--method", "bogus"]) == 2
    assert main(["benchmark", "--datasets", str(tmp_path), "--methods", "top1,nope"]) == 2
    assert main(["label", "--private", "p", "--index", "i", "--method", "top1", "--m", "0"]) == 2
