import csv
import io
import math

import pytest

from conftest import TOY1_SPEC
from mitd.calibration import RecordSet, read_records, write_records
from mitd.cli import _decode_sample, _strategies, main
from mitd.corpus import EncodedSample
from mitd.model import make_table_model, one_hot_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train -> decode with tiny dimensions."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "data"), "--train-size", "60", "--dev-size", "10",
                 "--test-size", "8", "--seed", "3"]) == 0
    train = ["train", "--train", str(d / "data/train.tsv"), "--dev", str(d / "data/dev.tsv"),
             "--embed-dim", "6", "--hidden-dim", "8", "--epochs", "2", "--seed", "5"]
    assert main(train + ["--model", str(d / "m.mitd"), "--report", str(d / "report.txt")]) == 0
    assert main(train + ["--model", str(d / "m2.mitd")]) == 0
    assert main(["decode", "--model", str(d / "m.mitd"), "--test", str(d / "data/test.tsv"),
                 "--out", str(d / "rec.tsv"), "--strategies", "greedy,beam:3,exact",
                 "--lower-bound", "beam:2", "--workers", "2"]) == 0
    return d


def test_synth_is_byte_identical(tmp_path, pipeline):
    main(["synth", "--out", str(tmp_path), "--train-size", "60", "--dev-size", "10", "--test-size", "8",
          "--seed", "3"])
    for name in ("train", "dev", "test"):
        assert (tmp_path / f"{name}.tsv").read_bytes() == (pipeline / f"data/{name}.tsv").read_bytes()


def test_train_outputs(pipeline):
    assert (pipeline / "m.mitd").read_bytes() == (pipeline / "m2.mitd").read_bytes()
    report = (pipeline / "report.txt").read_text()
    assert report.startswith("train_size\t60\n")


def test_decode_outputs(pipeline):
    rs = read_records(pipeline / "rec.tsv")
    assert rs.strategies == ["greedy", "beam:3", "exact"]
    assert len(rs.records) == 8 and rs.train_size == 60 and rs.dataset == "test"
    for r in rs.records:
        assert set(r.results) == {"greedy", "beam:3", "exact"}
        assert r.results["exact"].score >= r.results["beam:3"].score - 1e-9
    preds = (pipeline / "rec.predictions.tsv").read_text().splitlines()
    assert preds[0] == "lemma\tgold\tmsd\tgreedy\tbeam:3\texact" and len(preds) == 9


def test_decode_worker_count_does_not_change_output(tmp_path, pipeline):
    main(["decode", "--model", str(pipeline / "m.mitd"), "--test", str(pipeline / "data/test.tsv"),
          "--out", str(tmp_path / "rec.tsv"), "--strategies", "greedy,beam:3,exact", "--lower-bound", "beam:2"])
    a = read_records(tmp_path / "rec.tsv")
    b = read_records(pipeline / "rec.tsv")
    for ra, rb in zip(a.records, b.records):
        assert ra.results == rb.results and ra.empty_log_prob == rb.empty_log_prob


def test_analyze_is_byte_identical(tmp_path, capsys, pipeline):
    outs = []
    for i in range(2):
        code, _, _ = run(capsys, "analyze", pipeline / "rec.tsv", "--report", tmp_path / f"r{i}.csv")
        assert code == 0
        outs.append((tmp_path / f"r{i}.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.DictReader(io.StringIO(outs[0].decode())))
    assert {r["strategy"] for r in rows} == {"greedy", "beam:3", "exact"}
    assert {r["resource_class"] for r in rows} == {"all", "low"}
    assert all(r["mean_seconds"] for r in rows)


def test_analyze_toy1(tmp_path, capsys):
    from test_calibration import toy1_record
    m = make_table_model(TOY1_SPEC, depth=2)
    write_records(tmp_path / "t.tsv", RecordSet([toy1_record(m)], ["greedy", "beam:2", "exact"], "toy1"))
    code, _, _ = run(capsys, "analyze", tmp_path / "t.tsv", "--report", tmp_path / "t.csv")
    assert code == 0
    rows = {r["strategy"]: r for r in csv.DictReader(open(tmp_path / "t.csv"))}
    assert float(rows["greedy"]["search_error_rate"]) == 1.0
    assert float(rows["beam:2"]["search_error_rate"]) == 0.0


def test_analyze_empty_records_names_file(tmp_path, capsys):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    code, _, err = run(capsys, "analyze", path)
    assert code == 2 and "empty.tsv" in err


def test_missing_dev_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--train", "x.tsv", "--model", "m.mitd"])
    assert exc.value.code == 1
    assert "--dev" in capsys.readouterr().err


def test_bad_strategy_is_usage_error(tmp_path, capsys, pipeline):
    code, _, err = run(capsys, "decode", "--model", pipeline / "m.mitd", "--test", pipeline / "data/test.tsv",
                       "--out", tmp_path / "r.tsv", "--strategies", "beam:0")
    assert code == 1 and "beam" in err


def test_missing_model_is_data_error(tmp_path, capsys):
    code, _, _ = run(capsys, "decode", "--model", tmp_path / "nope", "--test", tmp_path / "t.tsv",
                     "--out", tmp_path / "r.tsv")
    assert code == 2


def test_plot(tmp_path, capsys):
    pts = tmp_path / "curve.tsv"
    pts.write_text("train_size\tmean_empty_logprob\n50\t-1.5\n500\t-4.0\n5000\t-9.25\n")
    for name in ("a.svg", "b.svg"):
        assert run(capsys, "plot", "--points", pts, "--out", tmp_path / name)[0] == 0
    svg = (tmp_path / "a.svg").read_text()
    assert svg == (tmp_path / "b.svg").read_text()
    assert svg.count("<circle") == 3 and svg.count('<path class="axis"') == 2
    assert 'width="800" height="500"' in svg


def test_plot_needs_two_points(tmp_path, capsys):
    pts = tmp_path / "curve.tsv"
    pts.write_text("train_size\tmean_empty_logprob\n50\t-1.5\n")
    assert run(capsys, "plot", "--points", pts, "--out", tmp_path / "x.svg")[0] == 2


def test_one_hot_model_all_strategies_agree():
    m = one_hot_model("ab")
    results, failures, empty = _decode_sample(m, EncodedSample((0,), (0, 1)), _strategies("greedy,beam:10,exact"),
                                              lower_bound=None, max_len=None, queue_capacity=None)
    assert not failures and empty == -math.inf
    assert {(r.y_star, r.score) for r in results.values()} == {((0, 1), 0.0)}


def test_queue_capacity_failure_row():
    m = make_table_model(TOY1_SPEC, depth=2)
    results, failures, _ = _decode_sample(m, EncodedSample((0,), ()), _strategies("greedy,exact"),
                                          lower_bound=None, max_len=None, queue_capacity=1)
    assert failures == {"exact": "queue_capacity"} and set(results) == {"greedy"}
