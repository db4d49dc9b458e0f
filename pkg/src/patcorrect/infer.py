"""Single-pass correction and a latency bench against a step-by-step decoder."""

from __future__ import annotations

import contextlib
import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .align import TagSeq, adjust_source
from .model import PATCorrect
from .textphon import BOS_ID, TokenSeq, detokenize, g2p, tokenize

AR_NOTES = {
    "ar_sim": (
        "ar_sim re-runs the trained decoder with a causal mask over the growing prefix and reads "
        "one new position per pass, for as many positions as the predicted output length; only "
        "wall time is meaningful"
    ),
    "ar_cached": (
        "ar_cached is ar_sim with cached self-attention keys/values, so each pass processes a "
        "single position; only wall time is meaningful"
    ),
}


@dataclass
class CorrectionResult:
    corrected: TokenSeq
    text: str
    predicted_tags: TagSeq
    raw_tags: list[float]
    timing: dict[str, float] = field(default_factory=dict)
    decoder_passes: int = 1


def discretize_tags(raw, max_tag_magnitude: int) -> TagSeq:
    """Round half away from zero, clamp to ``[-max_tag_magnitude, 1]``.

    If every tag comes out as a deletion, the position with the largest raw
    value is kept instead.
    """
    values = np.asarray(raw.data if isinstance(raw, nx.Tensor) else raw, dtype=float).reshape(-1)
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    tags = np.clip(rounded, -max_tag_magnitude, 1).astype(int)
    if tags.size and not tags.any():
        tags[int(np.argmax(values))] = 1
    return TagSeq([int(t) for t in tags])


@contextlib.contextmanager
def eval_mode(model: PATCorrect):
    with model.inference(), nx.no_grad():
        yield model


def correct_tokens(model: PATCorrect, words: Sequence[str], w_ids: Sequence[int], p_ids: Sequence[int]) -> CorrectionResult:
    """Run encode, fuse, tag prediction, adjustment and one decoder pass."""
    with eval_mode(model):
        before = model.thread_passes()
        t0 = time.perf_counter()
        enc = model.encode(w_ids, p_ids)
        t1 = time.perf_counter()
        raw = model.predict_tags(enc)
        tags = discretize_tags(raw, model.cfg.max_tag_magnitude)
        positions = adjust_source(list(range(len(words))), tags)
        adj_ids = [w_ids[i] for i in positions]
        t2 = time.perf_counter()
        logits = model.decode(adj_ids, enc)
        out_ids = logits.data.argmax(axis=1)
        out_words = []
        for src_pos, tok in zip(positions, out_ids):
            # reserved ids (pad/unk/bos/eos) fall back to the aligned source surface form
            out_words.append(words[src_pos] if tok < len(model.text_vocab.reserved) else model.text_vocab.symbol(int(tok)))
        t3 = time.perf_counter()
    return CorrectionResult(
        corrected=TokenSeq(out_words, [int(i) for i in out_ids]),
        text=detokenize(out_words),
        predicted_tags=tags,
        raw_tags=[float(v) for v in raw.data.reshape(-1)],
        timing={"encode_ms": (t1 - t0) * 1e3, "tag_ms": (t2 - t1) * 1e3, "decode_ms": (t3 - t2) * 1e3},
        decoder_passes=model.thread_passes() - before,
    )


def correct(text: str, model: PATCorrect, pron: dict[str, list[str]]) -> CorrectionResult:
    start = time.perf_counter()
    src = tokenize(text, model.text_vocab)
    phon = g2p(src.words, pron, model.phon_vocab)
    result = correct_tokens(model, src.words, src.ids, phon.ids)
    result.timing["total_ms"] = (time.perf_counter() - start) * 1e3
    return result


def ar_sim_decode(text: str, model: PATCorrect, pron: dict[str, list[str]], cached: bool = False) -> tuple[int, float]:
    """Greedy step-by-step decoding for n_hat steps, n_hat taken from the predicted tags.

    Returns (passes, ms); the decoded tokens are discarded.
    """
    start = time.perf_counter()
    with eval_mode(model):
        before = model.thread_passes()
        src = tokenize(text, model.text_vocab)
        phon = g2p(src.words, pron, model.phon_vocab)
        enc = model.encode(src.ids, phon.ids)
        n_hat = discretize_tags(model.predict_tags(enc), model.cfg.max_tag_magnitude).target_len
        if cached:
            cache = model.start_incremental(enc)
            token = BOS_ID
            for _ in range(n_hat):
                token = int(model.decode_next(token, cache).data[0].argmax())
        else:
            prefix = [BOS_ID]
            for _ in range(n_hat):
                prefix.append(int(model.decode_step(prefix, enc).data[0].argmax()))
        passes = model.thread_passes() - before
    return passes, (time.perf_counter() - start) * 1e3


def bench(
    texts: Sequence[str],
    model: PATCorrect,
    pron: dict[str, list[str]],
    mode: str = "nar",
    repeats: int = 5,
    warmup: int = 3,
) -> dict:
    """Per-sentence latency in ms (median over ``repeats``) plus decoder-pass counts."""
    if not texts:
        raise ValueError("bench needs at least one sentence")
    if mode not in ("nar", "ar_sim", "ar_cached"):
        raise ValueError(f"unknown bench mode {mode!r}")

    def run(text):
        if mode == "nar":
            r = correct(text, model, pron)
            return r.decoder_passes, r.timing["total_ms"], r.corrected.n
        passes, ms = ar_sim_decode(text, model, pron, cached=mode == "ar_cached")
        return passes, ms, passes

    for i in range(warmup):
        run(texts[i % len(texts)])
    per_sentence, passes, n_hat = [], [], []
    for text in texts:
        times = []
        for _ in range(max(1, repeats)):
            p, ms, length = run(text)
            times.append(ms)
        per_sentence.append(statistics.median(times))
        passes.append(p)
        n_hat.append(length)
    by_length: dict[int, list[float]] = {}
    for length, ms in zip(n_hat, per_sentence):
        by_length.setdefault(length, []).append(ms)
    report = {
        "mode": mode,
        "sentences": len(texts),
        "repeats": repeats,
        "mean_ms": float(np.mean(per_sentence)),
        "median_ms": float(np.median(per_sentence)),
        "p95_ms": float(np.percentile(per_sentence, 95)),
        "per_sentence_ms": per_sentence,
        "n_hat": n_hat,
        "decoder_passes": passes,
        "by_length_ms": {str(k): float(np.mean(v)) for k, v in sorted(by_length.items())},
    }
    if mode in AR_NOTES:
        report["note"] = AR_NOTES[mode]
    return report
