"""Per-sentence latency of single-pass decoding vs step-by-step decoding, by output length.

Uses an untrained desk model whose tag predictor is forced to keep every
token, so the output length equals the input length.

    python3 scripts/latency_bench.py [--lengths 8 16 32] [--repeats 5]
"""

import argparse
from importlib import resources

import numpy as np

from patcorrect import ModelConfig, PATCorrect, bench, build_dataset, load_pronouncing_dict


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--per-length", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--fusion", default="cross_atten")
    args = ap.parse_args()

    pron = load_pronouncing_dict()
    text = resources.files("patcorrect").joinpath("data/clean_sentences.txt").read_text(encoding="utf-8")
    lines = [l for l in text.splitlines() if l.strip()]
    data = build_dataset([f"{l}\t{l}" for l in lines], pron)
    model = PATCorrect(ModelConfig(fusion=args.fusion), data.text_vocab, data.phon_vocab, seed=0)
    model.params["tagp.mlp.1.w"].data[...] = 0.0
    model.params["tagp.mlp.1.b"].data[...] = 1.0

    words = sorted({w for l in lines for w in l.split()})
    rng = np.random.default_rng(0)
    texts = [" ".join(rng.choice(words, size=n)) for n in args.lengths for _ in range(args.per_length)]
    reports = {mode: bench(texts, model, pron, mode, args.repeats, warmup=2) for mode in ("nar", "ar_sim", "ar_cached")}

    print(f"{'n_hat':>6} {'nar ms':>9} {'ar_sim ms':>10} {'ar_cached ms':>13} {'speedup':>8}")
    for n in args.lengths:
        row = [reports[m]["by_length_ms"][str(n)] for m in ("nar", "ar_sim", "ar_cached")]
        print(f"{n:>6} {row[0]:>9.2f} {row[1]:>10.2f} {row[2]:>13.2f} {row[1] / row[0]:>7.1f}x")


if __name__ == "__main__":
    main()
