"""Overfit 32 synthetic pairs with the desk model and print the corpus WER.

    python3 scripts/overfit_demo.py [--pairs 32] [--out-dir runs/overfit]
"""

import argparse
import logging
import time
from importlib import resources

from patcorrect import (
    ModelConfig,
    NoiseConfig,
    PATCorrect,
    TrainConfig,
    build_dataset,
    build_homophone_index,
    correct,
    generate_pairs,
    load_pronouncing_dict,
    train_loop,
    wer,
)

RECIPE = TrainConfig(lr_peak=1e-3, warmup_steps=200, max_batch_tokens=80, epochs=10_000, max_steps=2000,
                     stop_wer=0.0, eval_every=5, seed=7)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=32)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    pron = load_pronouncing_dict()
    text = resources.files("patcorrect").joinpath("data/clean_sentences.txt").read_text(encoding="utf-8")
    clean = [l.split() for l in text.splitlines() if l.strip()][: args.pairs]
    pairs, report = generate_pairs(clean, NoiseConfig(seed=7, target_wer=0.2), build_homophone_index(pron))
    print(f"synthetic input WER {report['realized_wer']:.3f}")

    data = build_dataset([f"{a}\t{b}" for a, b in pairs], pron)
    model = PATCorrect(ModelConfig(), data.text_vocab, data.phon_vocab, seed=7)
    start = time.perf_counter()
    result = train_loop(data, model, RECIPE, out_dir=args.out_dir,
                        on_epoch=lambda r: print(f"epoch {r['epoch']:4d} step {r['step']:5d} loss {r['loss']:.4f}"
                                                 + (f" wer {r['dev_wer']:.4f}" if r.get("dev_wer") is not None else "")))
    print(f"stopped ({result.stopped}) after {result.steps} steps, {time.perf_counter() - start:.1f} s")

    errors = tokens = 0
    for src, tgt in pairs:
        out = correct(src, model, pron).corrected.words
        errors += wer(out, tgt.split()) * len(tgt.split())
        tokens += len(tgt.split())
        if out != tgt.split():
            print(f"  {src!r} -> {' '.join(out)!r} (want {tgt!r})")
    print(f"corpus WER after training: {errors / tokens:.4f}")


if __name__ == "__main__":
    main()
