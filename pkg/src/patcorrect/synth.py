"""Synthetic ASR-like noise: deletions, insertions and homophone substitutions.

Each clean token independently keeps, is substituted, is deleted, or is kept
with a random word inserted after it. Substitutions prefer a homophone from the
pronouncing dictionary when one exists. Every line gets its own generator
seeded from ``(seed, line_number)`` so output does not depend on processing
order.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import edit_distance
from .textphon import normalize_words

log = logging.getLogger(__name__)

CALIBRATION_LINES = 1000
CALIBRATION_ROUNDS = 6


@dataclass
class NoiseConfig:
    p_sub: float = 0.10
    p_del: float = 0.05
    p_ins: float = 0.05
    homophone_fraction: float = 0.8
    seed: int = 0
    target_wer: float | None = None

    def __post_init__(self):
        probs = (self.p_sub, self.p_del, self.p_ins, self.homophone_fraction)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("noise probabilities must lie in [0, 1]")
        if self.p_sub + self.p_del + self.p_ins > 1.0 + 1e-12:
            raise ValueError("p_sub + p_del + p_ins must not exceed 1")

    def scaled(self, factor: float) -> "NoiseConfig":
        total = self.p_sub + self.p_del + self.p_ins
        factor = min(factor, 1.0 / total) if total > 0 else factor
        return NoiseConfig(
            self.p_sub * factor, self.p_del * factor, self.p_ins * factor,
            self.homophone_fraction, self.seed, self.target_wer,
        )


def _strip_stress(phones: Sequence[str]) -> str:
    return " ".join(re.sub(r"\d", "", p) for p in phones)


class HomophoneIndex:
    """Words grouped by stress-stripped first pronunciation."""

    def __init__(self, pron: dict[str, list[str]]):
        self.key_of: dict[str, str] = {}
        buckets: dict[str, list[str]] = defaultdict(list)
        for word in sorted(pron):
            key = _strip_stress(pron[word])
            self.key_of[word] = key
            buckets[key].append(word)
        self.buckets = dict(buckets)

    def lookup(self, key: str) -> list[str]:
        return list(self.buckets.get(key, []))

    def homophones(self, word: str) -> list[str]:
        key = self.key_of.get(word)
        if key is None:
            return []
        return [w for w in self.buckets[key] if w != word]

    def same_sound(self, a: str, b: str) -> bool:
        return a in self.key_of and self.key_of.get(a) == self.key_of.get(b)


def build_homophone_index(pron: dict[str, list[str]]) -> HomophoneIndex:
    return HomophoneIndex(pron)


def line_rng(seed: int, line_no: int) -> np.random.Generator:
    return np.random.default_rng([seed, line_no])


def corrupt_with_ops(
    clean: Sequence[str],
    cfg: NoiseConfig,
    index: HomophoneIndex,
    vocab: Sequence[str],
    rng: np.random.Generator,
) -> tuple[list[str], list[tuple]]:
    """Noisy copy of ``clean`` and the operations applied, e.g. ``("sub", old, new, homophone)``."""
    if len(clean) == 0:
        raise ValueError("cannot corrupt an empty sentence")
    out: list[str] = []
    ops: list[tuple] = []
    survivors = 0
    c_sub = cfg.p_sub
    c_del = c_sub + cfg.p_del
    c_ins = c_del + cfg.p_ins

    def random_word(exclude: str | None = None) -> str:
        for _ in range(8):
            w = vocab[int(rng.integers(len(vocab)))]
            if w != exclude:
                return w
        return w

    for tok in clean:
        u = rng.random()
        if u < c_sub:
            homs = index.homophones(tok)
            if homs and rng.random() < cfg.homophone_fraction:
                new, hom = homs[int(rng.integers(len(homs)))], True
            else:
                new, hom = random_word(exclude=tok), False
            out.append(new)
            ops.append(("sub", tok, new, hom))
            survivors += 1
        elif u < c_del:
            ops.append(("del", tok))
        elif u < c_ins:
            new = random_word()
            out.extend([tok, new])
            ops.append(("ins", tok, new))
            survivors += 1
        else:
            out.append(tok)
            ops.append(("keep", tok))
            survivors += 1
    if survivors == 0:
        keep = int(rng.integers(len(clean)))
        out = [clean[keep]]
        ops[keep] = ("keep", clean[keep])
    return out, ops


def corrupt(clean, cfg, index, vocab, rng) -> list[str]:
    return corrupt_with_ops(clean, cfg, index, vocab, rng)[0]


def corrupt_lines(
    lines: Sequence[Sequence[str]], cfg: NoiseConfig, index: HomophoneIndex, vocab: Sequence[str]
) -> list[list[str]]:
    return [corrupt(words, cfg, index, vocab, line_rng(cfg.seed, i)) for i, words in enumerate(lines)]


def corpus_wer(noisy: Sequence[Sequence[str]], clean: Sequence[Sequence[str]]) -> float:
    dist = sum(edit_distance(c, n) for n, c in zip(noisy, clean))
    return dist / sum(len(c) for c in clean)


def calibrate(
    lines: Sequence[Sequence[str]], cfg: NoiseConfig, index: HomophoneIndex, vocab: Sequence[str]
) -> NoiseConfig:
    """Scale the three operation probabilities so the sample WER lands on ``cfg.target_wer``."""
    if cfg.target_wer is None:
        return cfg
    if cfg.p_sub + cfg.p_del + cfg.p_ins <= 0:
        raise ValueError("cannot calibrate towards a target WER with all probabilities zero")
    sample = list(lines[:CALIBRATION_LINES])
    current = cfg
    for _ in range(CALIBRATION_ROUNDS):
        realized = corpus_wer(corrupt_lines(sample, current, index, vocab), sample)
        if realized <= 0:
            current = current.scaled(2.0)
            continue
        if abs(realized - cfg.target_wer) <= 0.01 * cfg.target_wer:
            break
        current = current.scaled(cfg.target_wer / realized)
    return current


def read_clean(path: str | Path) -> list[list[str]]:
    lines = [normalize_words(l) for l in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [l for l in lines if l]
    if not lines:
        raise ValueError(f"{path} contains no sentences")
    return lines


def generate_pairs(
    clean: Sequence[Sequence[str]],
    cfg: NoiseConfig,
    index: HomophoneIndex,
    vocab: Sequence[str] | None = None,
) -> tuple[list[tuple[str, str]], dict]:
    """(noisy, clean) pairs plus a report with the effective probabilities and realized WER."""
    if not clean:
        raise ValueError("no clean sentences given")
    vocab = sorted({w for line in clean for w in line}) if vocab is None else list(vocab)
    effective = calibrate(clean, cfg, index, vocab)
    noisy = corrupt_lines(clean, effective, index, vocab)
    report = {
        "pairs": len(clean),
        "realized_wer": corpus_wer(noisy, clean),
        "target_wer": cfg.target_wer,
        "p_sub": effective.p_sub,
        "p_del": effective.p_del,
        "p_ins": effective.p_ins,
        "homophone_fraction": effective.homophone_fraction,
        "seed": cfg.seed,
    }
    return [(" ".join(n), " ".join(c)) for n, c in zip(noisy, clean)], report


def generate_corpus(clean_file, cfg: NoiseConfig, out_file, index: HomophoneIndex, vocab=None) -> dict:
    pairs, report = generate_pairs(read_clean(clean_file), cfg, index, vocab)
    with open(out_file, "w", encoding="utf-8", newline="\n") as fh:
        for noisy, clean in pairs:
            fh.write(f"{noisy}\t{clean}\n")
    return report


def random_sentences(words: Sequence[str], count: int, seed: int, min_len: int = 5, max_len: int = 12) -> list[list[str]]:
    """Clean pseudo-sentences sampled uniformly from ``words``; used to build large test corpora."""
    rng = np.random.default_rng(seed)
    words = list(words)
    out = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        out.append([words[int(i)] for i in rng.integers(len(words), size=n)])
    return out
