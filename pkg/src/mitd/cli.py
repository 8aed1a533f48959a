"""Command-line entry point: synth, train, decode, analyze, plot.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure or
training divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import calibration as cal
from .corpus import DataError, build_vocabulary, encode_all, read_unimorph
from .model import empty_string_log_prob
from .plot import render_curve_svg
from .search import (DecodeConfig, QueueCapacityError, SearchError, beam_decode, decode, dijkstra_decode,
                     parse_strategy)
from .synth import SynthError, SynthSpec, write_splits
from .transducer import (DivergenceError, Hyperparameters, ModelFileError, Transducer, load_model,
                         save_model, train)

log = logging.getLogger("mitd")

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def cmd_synth(args) -> int:
    spec = SynthSpec(alphabet_size=args.alphabet_size, min_len=args.min_lemma_len, max_len=args.max_lemma_len,
                     train=args.train_size, dev=args.dev_size, test=args.test_size, seed=args.seed)
    for name, path in write_splits(spec, args.out).items():
        print(f"{name}\t{path}")
    return 0


def cmd_train(args) -> int:
    train_raw = read_unimorph(args.train)
    dev_raw = read_unimorph(args.dev)
    vocab = build_vocabulary(train_raw)
    train_set, _ = encode_all(vocab, train_raw)
    dev_set, stats = encode_all(vocab, dev_raw)
    if stats.unknown_target:
        log.warning("%d unknown target characters in %s", stats.unknown_target, args.dev)
    h = Hyperparameters(embed_dim=args.embed_dim, hidden_dim=args.hidden_dim, learning_rate=args.lr,
                        batch_size=args.batch_size, max_epochs=args.epochs, patience=args.patience,
                        grad_clip_norm=args.clip, seed=args.seed)
    params, report = train(train_set, dev_set, h, vocab)
    save_model(params, h, vocab, args.model, metadata={"train_size": len(train_set)})
    text = report.dumps()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _strategies(text: str) -> list[DecodeConfig]:
    try:
        cfgs = [parse_strategy(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not cfgs:
        raise UsageError("--strategies is empty")
    return cfgs


def _decode_sample(model, sample, cfgs, lower_bound, max_len, queue_capacity):
    results, failures = {}, {}
    for cfg in cfgs:
        cfg = replace(cfg, max_len=max_len)
        if cfg.strategy != "exact":
            results[cfg.name] = decode(model, sample.x, cfg)
            continue
        cfg = replace(cfg, queue_capacity=queue_capacity)
        extra = 0.0
        if lower_bound is not None:
            bound = beam_decode(model, sample.x, DecodeConfig("beam", beam_width=lower_bound, max_len=max_len))
            cfg = replace(cfg, lower_bound=bound)
            extra = bound.stats.seconds
        try:
            r = dijkstra_decode(model, sample.x, cfg)
        except QueueCapacityError:
            failures[cfg.name] = "queue_capacity"
            continue
        results[cfg.name] = replace(r, stats=replace(r.stats, seconds=r.stats.seconds + extra))
    return results, failures, empty_string_log_prob(model, sample.x)


def cmd_decode(args) -> int:
    cfgs = _strategies(args.strategies)
    lower_bound = None
    if args.lower_bound != "none":
        lb = parse_strategy(args.lower_bound) if args.lower_bound.startswith("beam:") else None
        if lb is None:
            raise UsageError("--lower-bound must be 'none' or 'beam:K'")
        lower_bound = lb.beam_width
    params, h, vocab, meta = load_model(args.model)
    model = Transducer(params, h, vocab)
    raw = read_unimorph(args.test)
    samples, stats = encode_all(vocab, raw)
    if stats.unknown_source or stats.unknown_target:
        log.warning("%d source / %d target characters unknown to the model",
                    stats.unknown_source, stats.unknown_target)

    def work(sample):
        return _decode_sample(model, sample, cfgs, lower_bound, args.max_len, args.queue_capacity)

    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            outputs = list(pool.map(work, samples))
    else:
        outputs = [work(s) for s in samples]

    records = []
    for i, (rs, (results, failures, empty)) in enumerate(zip(raw, outputs)):
        spelled = {k: replace(r, y_star=vocab.decode(r.y_star)) for k, r in results.items()}
        records.append(cal.PredictionRecord(str(i), rs.target, spelled, empty, failures))
    names = [c.name for c in cfgs]
    train_size = args.train_size if args.train_size is not None else meta.get("train_size")
    dataset = args.dataset if args.dataset is not None else Path(args.test).stem
    cal.write_records(args.out, cal.RecordSet(records, names, dataset, train_size))

    pred_path = Path(args.predictions) if args.predictions else Path(args.out).with_suffix(".predictions.tsv")
    lines = ["\t".join(["lemma", "gold", "msd"] + names)]
    for rs, rec in zip(raw, records):
        outs = [rec.results[n].y_star if n in rec.results else "" for n in names]
        lines.append("\t".join([rs.lemma, rs.target, ";".join(rs.msd)] + outs))
    pred_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    n_failed = sum(len(r.failures) for r in records)
    print(f"decoded {len(records)} samples x {len(names)} strategies; {n_failed} failed")
    return 0


def cmd_analyze(args) -> int:
    sets = [cal.read_records(p) for p in args.records]
    rows = cal.build_report(sets)
    csv_text = cal.dumps_report_csv(rows)
    if args.report:
        Path(args.report).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    text = cal.render_report_text(rows)
    if args.text:
        Path(args.text).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.curve:
        runs = [(rs.train_size, rs.records) for rs in sets if rs.train_size is not None]
        points = cal.size_vs_empty_curve(runs)
        Path(args.curve).write_text("train_size\tmean_empty_logprob\n"
                                    + "".join(f"{n}\t{v!r}\n" for n, v in points), encoding="utf-8")
    return 0


def _read_points(path) -> list[tuple[float, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    points = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.strip():
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError("expected train_size and mean_empty_logprob", lineno, str(path))
            points.append((float(parts[0]), float(parts[1])))
    return points


def cmd_plot(args) -> int:
    if args.points:
        points = _read_points(args.points)
    elif args.records:
        sets = [cal.read_records(p) for p in args.records]
        points = cal.size_vs_empty_curve([(rs.train_size, rs.records) for rs in sets if rs.train_size is not None])
    else:
        raise UsageError("give records files or --points")
    if len(points) < 2:
        raise DataError(f"need at least 2 points to plot, got {len(points)}")
    Path(args.out).write_text(render_curve_svg(points), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mitd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic inflection language as UniMorph TSVs")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--train-size", type=int, default=5000)
    s.add_argument("--dev-size", type=int, default=500)
    s.add_argument("--test-size", type=int, default=500)
    s.add_argument("--alphabet-size", type=int, default=12)
    s.add_argument("--min-lemma-len", type=int, default=3)
    s.add_argument("--max-lemma-len", type=int, default=8)
    s.set_defaults(func=cmd_synth)

    d = Hyperparameters()
    t = sub.add_parser("train", help="train a transducer")
    t.add_argument("--train", required=True)
    t.add_argument("--dev", required=True)
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--report", help="output training report")
    t.add_argument("--seed", type=int, default=d.seed)
    t.add_argument("--embed-dim", type=int, default=d.embed_dim)
    t.add_argument("--hidden-dim", type=int, default=d.hidden_dim)
    t.add_argument("--lr", type=float, default=d.learning_rate)
    t.add_argument("--batch-size", type=int, default=d.batch_size)
    t.add_argument("--epochs", type=int, default=d.max_epochs)
    t.add_argument("--patience", type=int, default=d.patience)
    t.add_argument("--clip", type=float, default=d.grad_clip_norm)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("decode", help="decode a test set with several strategies")
    c.add_argument("--model", required=True)
    c.add_argument("--test", required=True)
    c.add_argument("--out", required=True, help="records TSV")
    c.add_argument("--predictions", help="predictions TSV (default: next to --out)")
    c.add_argument("--strategies", default="greedy,beam:10,exact")
    c.add_argument("--max-len", type=int, default=None, help="default 2*|x|+5 per sample")
    c.add_argument("--lower-bound", default="none", help="none or beam:K (exact search only)")
    c.add_argument("--queue-capacity", type=int, default=None)
    c.add_argument("--dataset", default=None)
    c.add_argument("--train-size", type=int, default=None, help="default: stored in the model file")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_decode)

    a = sub.add_parser("analyze", help="aggregate records into a calibration report")
    a.add_argument("records", nargs="+")
    a.add_argument("--report", help="CSV output (default: stdout)")
    a.add_argument("--text", help="also write the aligned text table here")
    a.add_argument("--curve", help="write size vs. empty log-prob points (TSV)")
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("plot", help="SVG of mean empty-string log-prob vs training size")
    g.add_argument("records", nargs="*")
    g.add_argument("--points", help="TSV written by analyze --curve")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mitd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SynthError, ModelFileError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"mitd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, SearchError) as exc:
        print(f"mitd: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"mitd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
