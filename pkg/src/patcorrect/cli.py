"""Command-line entry point: ``patcorrect {align,train,correct,eval,synth,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import align as al
from .config import ConfigError, load_run_config
from .infer import bench, correct
from .metrics import evaluate_groups
from .model import PATCorrect, load_checkpoint
from .synth import build_homophone_index, generate_corpus
from .textphon import EmptySequenceError, load_pronouncing_dict, normalize_words
from .train import TrainingDiverged, build_dataset, read_pairs, train_loop

log = logging.getLogger("patcorrect")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PATC_THREADS", "1")))
    except ValueError:
        return 1


def _emit(obj, args, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(text)


def _run_config(args, extra=()):
    overrides = list(args.set or []) + list(extra)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    run = load_run_config(args.config, overrides)
    log.info("effective config: %s", json.dumps(run.flat(), sort_keys=True))
    return run


def _pron(args, run):
    path = args.dict or run.paths["dict"]
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"dictionary not found: {path}")
    return load_pronouncing_dict(path)


def _read_lines(path: str | None) -> list[str]:
    if path is None or path == "-":
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


# ---------------------------------------------------------------------------


def cmd_align(args) -> int:
    _run_config(args)
    rows, bad = [], []
    for lineno, line in enumerate(_read_lines(args.input), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        src = normalize_words(parts[0]) if len(parts) == 2 else []
        if len(parts) != 2 or not src:
            print(f"line {lineno}: expected 'source<TAB>target' with a non-empty source", file=sys.stderr)
            bad.append(lineno)
            continue
        tgt = normalize_words(parts[1])
        tags = al.alignment_tags(src, tgt)
        rows.append({"line": lineno, "source": " ".join(src), "target": " ".join(tgt), "tags": tags.tags})
    if args.json:
        out = json.dumps({"rows": rows, "malformed_lines": bad}, indent=2)
    else:
        out = "\n".join(f"{r['source']}\t{r['target']}\t{' '.join(map(str, r['tags']))}" for r in rows)
    if args.out:
        Path(args.out).write_text(out + "\n", encoding="utf-8")
    else:
        print(out)
    return 1 if bad and args.strict else 0


def cmd_train(args) -> int:
    run = _run_config(args)
    pron = _pron(args, run)
    if args.resume:
        model = load_checkpoint(args.resume).model
        data = build_dataset(read_pairs(args.corpus), pron, model.text_vocab, model.phon_vocab)
    else:
        data = build_dataset(read_pairs(args.corpus), pron)
        model = PATCorrect(run.model, data.text_vocab, data.phon_vocab, seed=run.train.seed)
    dev = None
    if args.dev:
        dev = build_dataset(read_pairs(args.dev), pron, data.text_vocab, data.phon_vocab).examples
    log.info("%d training pairs, vocab %d words", len(data.examples), len(data.text_vocab))
    result = train_loop(
        data, model, run.train, dev=dev, out_dir=args.out_dir, resume=args.resume,
        on_epoch=lambda r: log.info("epoch %(epoch)d step %(step)d loss %(loss).4f", r),
    )
    summary = {
        "steps": result.steps,
        "epochs": len(result.history),
        "stopped": result.stopped,
        "final": result.history[-1] if result.history else {},
        "checkpoint": str(Path(args.out_dir) / "last.patc"),
    }
    _emit(summary, args, f"trained {result.steps} steps ({result.stopped}); checkpoint {summary['checkpoint']}")
    return 0


def cmd_correct(args) -> int:
    run = _run_config(args)
    model = load_checkpoint(args.checkpoint).model
    pron = _pron(args, run)
    lines = [l for l in _read_lines(args.input) if l.strip()]

    def one(line):
        try:
            return correct(line, model, pron)
        except EmptySequenceError:
            return None

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(one, lines))
    records = []
    for line, r in zip(lines, results):
        if r is None:
            records.append({"input": line, "output": "", "tags": [], "decoder_passes": 0})
        else:
            records.append({"input": line, "output": r.text, "tags": r.predicted_tags.tags, "decoder_passes": r.decoder_passes})
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(f"{rec['input']}\t{rec['output']}\t{' '.join(map(str, rec['tags']))}\n")
    _emit({"results": records}, args, "\n".join(rec["output"] for rec in records))
    return 0


def _read_triples(path: str):
    triples = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
        hyp, cor, ref = (normalize_words(p) for p in parts)
        triples.append((hyp, cor, ref))
    return triples


def cmd_eval(args) -> int:
    _run_config(args)
    groups = [_read_triples(p) for p in args.inputs]
    report = evaluate_groups(groups, args.aggregate)
    _emit(report.to_dict(), args, report.table())
    return 0


def cmd_synth(args) -> int:
    flags = ("p_sub", "p_del", "p_ins", "homophone_fraction", "target_wer")
    run = _run_config(args, [f"{k}={getattr(args, k)}" for k in flags if getattr(args, k) is not None])
    pron = _pron(args, run)
    vocab = sorted(pron) if args.vocab == "dict" else None
    report = generate_corpus(args.input, run.noise, args.output, build_homophone_index(pron), vocab)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    if args.json:
        print(text)
    else:
        print(text, file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    run = _run_config(args)
    model = load_checkpoint(args.checkpoint).model
    texts = [l for l in _read_lines(args.input) if l.strip()]
    report = bench(texts, model, _pron(args, run), args.mode, args.repeats, args.warmup)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    _emit(report, args, f"{args.mode}: mean {report['mean_ms']:.2f} ms, median {report['median_ms']:.2f} ms, "
          f"p95 {report['p95_ms']:.2f} ms per sentence")
    return 0


# ---------------------------------------------------------------------------


def exists(value: str) -> str:
    if value != "-" and not Path(value).is_file():
        raise argparse.ArgumentTypeError(f"file not found: {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patcorrect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dict_flag=True):
        p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", type=exists, help="JSON or key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if dict_flag:
            p.add_argument("--dict", type=exists, default=None, help="CMUdict-format file (default: bundled subset)")

    p = sub.add_parser("align", help="edit tags for source<TAB>target lines")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true", help="exit 1 if any line is malformed")
    common(p, dict_flag=False)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train on a source<TAB>target corpus")
    p.add_argument("corpus", type=exists)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dev", type=exists)
    p.add_argument("--resume", type=exists)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", help="correct one sentence per line")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--checkpoint", required=True, type=exists)
    p.add_argument("--trace", help="write input<TAB>output<TAB>tags")
    common(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("eval", help="score hypothesis<TAB>corrected<TAB>reference files")
    p.add_argument("inputs", nargs="+", type=exists)
    p.add_argument("--aggregate", choices=("pooled", "equal"), default="pooled")
    common(p, dict_flag=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="inject synthetic recognition errors into clean text")
    p.add_argument("input", type=exists)
    p.add_argument("output")
    p.add_argument("--p-sub", dest="p_sub", type=float)
    p.add_argument("--p-del", dest="p_del", type=float)
    p.add_argument("--p-ins", dest="p_ins", type=float)
    p.add_argument("--homophone-fraction", dest="homophone_fraction", type=float)
    p.add_argument("--target-wer", dest="target_wer", type=float)
    p.add_argument("--vocab", choices=("corpus", "dict"), default="corpus", help="pool for random words")
    p.add_argument("--report")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="latency per sentence")
    p.add_argument("input", type=exists)
    p.add_argument("--checkpoint", required=True, type=exists)
    p.add_argument("--mode", choices=("nar", "ar_sim", "ar_cached"), default="nar")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
