"""Word tokenisation, vocabularies and dictionary-based grapheme-to-phoneme."""

from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS, WB = "<pad>", "<unk>", "<s>", "</s>", "<wb>"
TEXT_RESERVED = (PAD, UNK, BOS, EOS)
PHONEME_RESERVED = (PAD, UNK, BOS, EOS, WB)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, WB_ID = 0, 1, 2, 3, 4

# One phoneme per letter for words missing from the dictionary.
LETTER_PHONEMES = {
    "a": "AH", "b": "B", "c": "K", "d": "D", "e": "EH", "f": "F", "g": "G",
    "h": "HH", "i": "IH", "j": "JH", "k": "K", "l": "L", "m": "M", "n": "N",
    "o": "OW", "p": "P", "q": "K", "r": "R", "s": "S", "t": "T", "u": "AH",
    "v": "V", "w": "W", "x": "K", "y": "Y", "z": "Z",
}

_STRIP = string.punctuation + "\u2018\u2019\u201c\u201d\u2013\u2014\u2026"
_VARIANT = re.compile(r"^(.+)\((\d+)\)$")


class EmptySequenceError(ValueError):
    pass


class Vocab:
    """Symbol/index bijection with fixed reserved entries at the front."""

    def __init__(self, symbols: Iterable[str] = (), reserved: Sequence[str] = TEXT_RESERVED):
        self.reserved = tuple(reserved)
        self._symbols: list[str] = list(self.reserved)
        self._index = {s: i for i, s in enumerate(self._symbols)}
        for s in symbols:
            self.add(s)

    @classmethod
    def for_text(cls, words: Iterable[str] = ()) -> "Vocab":
        return cls(sorted(set(words)), TEXT_RESERVED)

    @classmethod
    def for_phonemes(cls, phonemes: Iterable[str] = ()) -> "Vocab":
        return cls(sorted(set(phonemes)), PHONEME_RESERVED)

    def add(self, symbol: str) -> int:
        if symbol not in self._index:
            self._index[symbol] = len(self._symbols)
            self._symbols.append(symbol)
        return self._index[symbol]

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def index(self, symbol: str) -> int:
        return self._index.get(symbol, UNK_ID)

    def symbol(self, i: int) -> str:
        return self._symbols[i]

    def encode(self, symbols: Iterable[str]) -> list[int]:
        return [self.index(s) for s in symbols]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._symbols[i] for i in ids]

    @property
    def symbols(self) -> list[str]:
        return list(self._symbols)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._symbols) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_symbols(lines)

    @classmethod
    def from_symbols(cls, symbols: Sequence[str]) -> "Vocab":
        reserved = PHONEME_RESERVED if len(symbols) > 4 and symbols[4] == WB else TEXT_RESERVED
        if tuple(symbols[: len(reserved)]) != reserved:
            raise ValueError("vocabulary does not start with the reserved symbols")
        return cls(symbols[len(reserved) :], reserved)


@dataclass
class TokenSeq:
    words: list[str]
    ids: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class PhonemeSeq:
    symbols: list[str]
    word_spans: list[tuple[int, int]]
    ids: list[int] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)


def normalize_words(text: str) -> list[str]:
    words = []
    for raw in text.lower().split():
        w = raw.strip(_STRIP)
        if w:
            words.append(w)
    return words


def tokenize(text: str, vocab: Vocab | None = None) -> TokenSeq:
    """Lowercase, split on whitespace and trim surrounding punctuation.

    Apostrophes inside a word survive ("don't"). Surface forms are always kept;
    ``ids`` is filled only when a vocabulary is given.
    """
    words = normalize_words(text)
    if not words:
        raise EmptySequenceError("input contains no tokens")
    return TokenSeq(words, vocab.encode(words) if vocab is not None else [])


def detokenize(words: Sequence[str]) -> str:
    return " ".join(words)


def load_pronouncing_dict(path: str | Path | None = None) -> dict[str, list[str]]:
    """Read a CMUdict-style file into a lowercase word -> phoneme list map.

    Lines starting with ``;;;`` are comments. ``WORD(2)`` style variants are
    dropped in favour of the first pronunciation. Malformed lines are skipped
    and counted in a warning. Without ``path`` the bundled subset is used.
    """
    if path is None:
        text = resources.files("patcorrect").joinpath("data/cmudict_subset.dict").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    pron: dict[str, list[str]] = {}
    bad = 0
    for line in text.splitlines():
        if not line.strip() or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2 or not all(re.fullmatch(r"[A-Za-z]+[0-2]?", p) for p in parts[1:]):
            bad += 1
            continue
        head = parts[0].lower()
        if _VARIANT.match(head):
            continue
        pron.setdefault(head, parts[1:])
    if bad:
        log.warning("skipped %d malformed pronouncing-dictionary lines", bad)
    return pron


def word_phonemes(word: str, pron: dict[str, list[str]]) -> list[str]:
    if word in pron:
        return list(pron[word])
    spelled = [LETTER_PHONEMES[c] for c in word if c in LETTER_PHONEMES]
    return spelled or ["AH"]


def g2p(words: Sequence[str], pron: dict[str, list[str]], vocab: Vocab | None = None) -> PhonemeSeq:
    """Concatenate per-word pronunciations with one word-boundary symbol between words.

    Each word's span includes the boundary symbol that follows it, so spans
    partition the whole phoneme sequence.
    """
    symbols: list[str] = []
    spans: list[tuple[int, int]] = []
    for i, w in enumerate(words):
        start = len(symbols)
        symbols.extend(word_phonemes(w, pron))
        if i < len(words) - 1:
            symbols.append(WB)
        spans.append((start, len(symbols)))
    return PhonemeSeq(symbols, spans, vocab.encode(symbols) if vocab is not None else [])


def phoneme_inventory(pron: dict[str, list[str]]) -> Vocab:
    """Phoneme vocabulary covering the dictionary and the letter fallback table."""
    symbols = {p for phones in pron.values() for p in phones}
    symbols.update(LETTER_PHONEMES.values())
    symbols.add("AH")
    return Vocab.for_phonemes(symbols)
