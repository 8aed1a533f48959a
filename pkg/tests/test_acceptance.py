"""Acceptance criteria, run end to end on random table models and the synthetic language.

Criteria 5-10 share one trained model (synth 5000/500, seed 0) and take
roughly 20 minutes on one core. Set MITD_ACCEPTANCE_FULL=1 to also retrain
the seed-1 and seed-2 5000-sample models in the determinism check.
"""
import csv
import os
import time
from statistics import fmean

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mitd.calibration import read_records, search_error_rate
from mitd.cli import main
from mitd.corpus import build_vocabulary, encode_all, read_unimorph
from mitd.model import empty_string_log_prob, sample_random_model
from mitd.search import DecodeConfig, beam_decode, brute_force_argmax, dijkstra_decode, greedy_decode
from mitd.synth import SynthSpec, generate
from mitd.transducer import Hyperparameters, Transducer, check_gradients, init_params, load_model, train

pytestmark = pytest.mark.slow

STRATEGIES = "greedy,beam:1,beam:10,beam:100,exact"
SIZES = (50, 500, 5000)
SEEDS = (0, 1, 2)


def record(n, name, ok, detail):
    line = f"criterion {n}: {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- random table models -------------------------------------------------------

@pytest.fixture(scope="module")
def table_models():
    # 500 models cycling through |V| in {2, 3} and depth 1..5
    return [sample_random_model(i, 2 + i % 2, 1 + (i // 2) % 5) for i in range(500)]


def test_oracle_equivalence(table_models):
    t0 = time.perf_counter()
    bad = 0
    for m in table_models:
        r = dijkstra_decode(m, (), DecodeConfig("exact", max_len=m.depth))
        o = brute_force_argmax(m, (), m.depth)
        bad += r.y_star != o.y_star or abs(r.score - o.score) > 1e-9
    dt = time.perf_counter() - t0
    record(1, "oracle equivalence", bad == 0 and dt < 30, f"{len(table_models) - bad}/{len(table_models)} match, {dt:.1f}s")


def test_strategy_algebra(table_models):
    greedy_mismatch = beam_excess = wide_mismatch = n_wide = 0
    for m in table_models:
        exact = dijkstra_decode(m, (), DecodeConfig("exact", max_len=m.depth))
        g = greedy_decode(m, (), DecodeConfig(max_len=m.depth))
        greedy_mismatch += g != beam_decode(m, (), DecodeConfig("beam", beam_width=1, max_len=m.depth))
        for k in (1, 2, 5):
            r = beam_decode(m, (), DecodeConfig("beam", beam_width=k, max_len=m.depth))
            beam_excess += r.score > exact.score + 1e-9
        if m.depth <= 3 and len(m.symbols) == 2:
            n_wide += 1
            r = beam_decode(m, (), DecodeConfig("beam", beam_width=64, max_len=m.depth))
            wide_mismatch += (r.y_star, r.score) != (exact.y_star, exact.score)
    ok = greedy_mismatch == beam_excess == wide_mismatch == 0 and n_wide > 0
    record(2, "strategy algebra", ok, f"greedy!=beam1: {greedy_mismatch}, beam>exact: {beam_excess}, "
                                      f"beam64!=exact: {wide_mismatch}/{n_wide}")


def test_pruning_soundness(table_models):
    differ = more_nodes = 0
    for m in table_models:
        plain = dijkstra_decode(m, (), DecodeConfig("exact", max_len=m.depth))
        bound = beam_decode(m, (), DecodeConfig("beam", beam_width=5, max_len=m.depth))
        pruned = dijkstra_decode(m, (), DecodeConfig("exact", max_len=m.depth, lower_bound=bound))
        differ += (pruned.y_star, pruned.score) != (plain.y_star, plain.score)
        more_nodes += pruned.stats.nodes_expanded > plain.stats.nodes_expanded
    record(3, "pruning soundness", differ == more_nodes == 0,
           f"{differ} differ, {more_nodes} expand more nodes")


def test_gradient_correctness():
    data = generate(SynthSpec(train=10, dev=1, test=1, seed=7))
    vocab = build_vocabulary(data["train"])
    samples = encode_all(vocab, data["train"])[0]
    errors = []
    for draw in range(10):
        h = Hyperparameters(embed_dim=8, hidden_dim=12, seed=draw)
        rng = np.random.default_rng(100 + draw)
        params = {k: v + 0.3 * rng.standard_normal(v.shape)
                  for k, v in init_params(h, len(vocab), vocab.num_outputs).items()}
        errors.append(check_gradients(params, samples[draw], epsilon=1e-5, seed=draw))
    record(4, "gradient correctness", max(errors) < 1e-4, f"max relative error {max(errors):.2e}")


# -- synthetic language --------------------------------------------------------

def pipeline(root):
    """synth -> train -> decode -> analyze through the CLI; returns paths and wall time."""
    t0 = time.perf_counter()
    data = root / "data"
    assert main(["synth", "--out", str(data), "--seed", "1"]) == 0
    assert main(["train", "--train", str(data / "train.tsv"), "--dev", str(data / "dev.tsv"),
                 "--model", str(root / "model.mitd"), "--report", str(root / "train_report.txt"),
                 "--seed", "0"]) == 0
    assert main(["decode", "--model", str(root / "model.mitd"), "--test", str(data / "test.tsv"),
                 "--out", str(root / "records.tsv"), "--strategies", STRATEGIES]) == 0
    assert main(["analyze", str(root / "records.tsv"), "--report", str(root / "report.csv")]) == 0
    return {"root": root, "data": data, "seconds": time.perf_counter() - t0}


def report_rows(path):
    with open(path, newline="") as f:
        return {r["strategy"]: r for r in csv.DictReader(f) if r["resource_class"] == "all"}


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("toy_run"))


def empty_curve(toy_run, sizes, seeds, retrain_5000_seed_0=False):
    """Mean empty-string log-prob on the test set per (size, seed)."""
    data = toy_run["data"]
    train_raw = read_unimorph(data / "train.tsv")
    dev_raw, test_raw = read_unimorph(data / "dev.tsv"), read_unimorph(data / "test.tsv")
    out = {}
    for n in sizes:
        for seed in seeds:
            if n == 5000 and seed == 0 and not retrain_5000_seed_0:
                params, h, vocab, _ = load_model(toy_run["root"] / "model.mitd")
            else:
                vocab = build_vocabulary(train_raw[:n])
                h = Hyperparameters(seed=seed)
                params, _ = train(encode_all(vocab, train_raw[:n])[0], encode_all(vocab, dev_raw)[0], h, vocab)
            model = Transducer(params, h, vocab)
            test = encode_all(vocab, test_raw)[0]
            out[n, seed] = fmean(empty_string_log_prob(model, s.x) for s in test)
    return out


@pytest.fixture(scope="session")
def curve(toy_run):
    return empty_curve(toy_run, SIZES, SEEDS)


def test_toy_flatness_and_search_errors(toy_run):
    root = toy_run["root"]
    report = dict(line.split("\t", 1) for line in (root / "train_report.txt").read_text().splitlines()[:4])
    dev_acc = float(report["best_dev_accuracy"])
    recs = read_records(root / "records.tsv").records
    rows = report_rows(root / "report.csv")
    acc_gap = abs(float(rows["beam:1"]["accuracy"]) - float(rows["beam:100"]["accuracy"]))
    err = {k: search_error_rate(recs, k, tolerance=1e-9) for k in ("greedy", "beam:1", "beam:10", "beam:100")}
    ok = (dev_acc >= 0.95 and acc_gap <= 0.005 and err["greedy"] <= 0.01 and err["beam:1"] <= 0.01
          and err["beam:10"] == 0 and err["beam:100"] == 0 and toy_run["seconds"] <= 900)
    record(5, "flat accuracy in k, vanishing search errors", ok,
           f"dev acc {dev_acc:.3f}, |acc(k=1)-acc(k=100)| {acc_gap:.4f}, search errors "
           + ", ".join(f"{k} {v:.3f}" for k, v in err.items()) + f", {toy_run['seconds']:.0f}s")


def test_toy_no_empty_optima(toy_run):
    rows = report_rows(toy_run["root"] / "report.csv")
    rate = float(rows["exact"]["empty_optimum_rate"])
    n = int(rows["exact"]["n_samples"]) - int(rows["exact"]["n_failed"])
    record(6, "no empty-string optima", rate == 0 and n == 500, f"rate {rate} over {n} exact decodes")


def test_empty_mass_grows_as_data_shrinks(curve):
    means = {n: fmean(curve[n, s] for s in SEEDS) for n in SIZES}
    ok = means[50] > means[500] > means[5000]
    record(7, "empty-string mass vs training size", ok,
           ", ".join(f"n={n}: {means[n]:.3f}" for n in SIZES))


def test_optimum_vs_empty_gap(toy_run):
    row = report_rows(toy_run["root"] / "report.csv")["exact"]
    gap = float(row["mean_logprob"]) - float(row["mean_empty_logprob"])
    ok = gap >= 3 and int(row["n_neg_inf"]) == 0
    record(8, "optimum vs empty log-prob gap", ok,
           f"optimum {float(row['mean_logprob']):.3f}, empty {float(row['mean_empty_logprob']):.3f}, gap {gap:.2f}")


def test_timing_report(toy_run):
    rows = report_rows(toy_run["root"] / "report.csv")
    secs = {k: float(r["mean_seconds"]) for k, r in rows.items()}
    ok = all(v > 0 for v in secs.values()) and secs["exact"] <= 10 * secs["greedy"]
    record(9, "timing report", ok, ", ".join(f"{k} {v * 1000:.2f}ms" for k, v in secs.items()))


def _without_columns(text, drop, delimiter):
    rows = list(csv.reader(text.splitlines(), delimiter=delimiter))
    start = next(i for i, r in enumerate(rows) if r and not r[0].startswith("#"))
    keep = [i for i, c in enumerate(rows[start]) if c not in drop]
    return rows[:start] + [[r[i] for i in keep] for r in rows[start:]]


def test_determinism(toy_run, curve, tmp_path_factory):
    again = pipeline(tmp_path_factory.mktemp("toy_rerun"))
    a, b = toy_run["root"], again["root"]
    same = {
        "data": all((a / "data" / f).read_bytes() == (b / "data" / f).read_bytes()
                    for f in ("train.tsv", "dev.tsv", "test.tsv")),
        "model": (a / "model.mitd").read_bytes() == (b / "model.mitd").read_bytes(),
        "predictions": (a / "records.predictions.tsv").read_bytes() == (b / "records.predictions.tsv").read_bytes(),
        "records": _without_columns((a / "records.tsv").read_text(), {"seconds"}, "\t")
        == _without_columns((b / "records.tsv").read_text(), {"seconds"}, "\t"),
        "report": _without_columns((a / "report.csv").read_text(), {"mean_seconds"}, ",")
        == _without_columns((b / "report.csv").read_text(), {"mean_seconds"}, ","),
    }
    sizes = SIZES if os.environ.get("MITD_ACCEPTANCE_FULL") == "1" else (50, 500)
    repeat = empty_curve(toy_run, sizes, SEEDS)
    same["curve"] = all(repeat[k] == curve[k] for k in repeat)
    record(10, "determinism", all(same.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())
           + f"; curve rerun covers sizes {sizes}")
