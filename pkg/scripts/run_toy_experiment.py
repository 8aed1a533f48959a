"""Full toy experiment on the synthetic language.

Trains one transducer per (training size, seed), decodes the shared test set
with several strategies, then writes the calibration report, the
size-vs-empty-string curve and its SVG plot into --out.

    python scripts/run_toy_experiment.py --out runs/toy
    python scripts/run_toy_experiment.py --out runs/quick --sizes 50,500 --seeds 0 --strategies greedy,exact
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from mitd.cli import main as mitd
from mitd.corpus import format_unimorph, read_unimorph


def run(cmd: list) -> None:
    code = mitd([str(c) for c in cmd])
    if code:
        raise SystemExit(f"mitd {cmd[0]} failed with exit code {code}")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sizes", default="50,500,5000")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--strategies", default="greedy,beam:1,beam:10,beam:100,exact")
    p.add_argument("--data-seed", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    sizes = [int(s) for s in args.sizes.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    data = args.out / "data"
    run(["synth", "--out", data, "--seed", args.data_seed, "--train-size", max(sizes)])
    full_train = read_unimorph(data / "train.tsv")

    records = []
    for n in sizes:
        train_path = data / f"train_{n}.tsv"
        train_path.write_text(format_unimorph(full_train[:n]), encoding="utf-8")
        for seed in seeds:
            tag = args.out / f"n{n}_s{seed}"
            logging.info("training size %d seed %d", n, seed)
            run(["train", "--train", train_path, "--dev", data / "dev.tsv", "--model", f"{tag}.mitd",
                 "--report", f"{tag}.train.txt", "--seed", seed])
            run(["decode", "--model", f"{tag}.mitd", "--test", data / "test.tsv", "--out", f"{tag}.records.tsv",
                 "--strategies", args.strategies, "--dataset", f"synth_n{n}_s{seed}"])
            records.append(f"{tag}.records.tsv")

    run(["analyze", *records, "--report", args.out / "report.csv", "--text", args.out / "report.txt",
         "--curve", args.out / "curve.tsv"])
    if len(sizes) > 1:
        run(["plot", "--points", args.out / "curve.tsv", "--out", args.out / "empty_vs_size.svg"])


if __name__ == "__main__":
    main()
