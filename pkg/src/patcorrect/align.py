"""Levenshtein edit paths, per-source-token edit tags and decoder-input adjustment.

Tag semantics for a source token aligned to ``k`` target tokens:

* ``1``  kept unchanged (exactly one identical target token)
* ``0``  deleted
* ``-k`` any other mapping: ``-1`` is a plain substitution, ``-k`` with
  ``k >= 2`` means the token is expanded with adjacent insertions

so the sum of absolute tags always equals the target length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

KEEP, SUB, INS, DEL = "KEEP", "SUB", "INS", "DEL"


@dataclass(frozen=True)
class EditOp:
    op: str
    src: int | None
    tgt: int | None


@dataclass
class EditPath:
    ops: list[EditOp]
    total_cost: int


@dataclass
class TagSeq:
    tags: list[int]

    @property
    def n(self) -> int:
        return len(self.tags)

    @property
    def target_len(self) -> int:
        return sum(abs(t) for t in self.tags)

    def __len__(self) -> int:
        return len(self.tags)

    def __iter__(self):
        return iter(self.tags)


def distance_table(src: Sequence[Hashable], tgt: Sequence[Hashable]) -> list[list[int]]:
    n, m = len(src), len(tgt)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row, prev, s = d[i], d[i - 1], src[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (s != tgt[j - 1]), prev[j] + 1, row[j - 1] + 1)
    return d


def edit_distance(src: Sequence[Hashable], tgt: Sequence[Hashable]) -> int:
    return distance_table(src, tgt)[len(src)][len(tgt)]


def edit_path(src: Sequence[Hashable], tgt: Sequence[Hashable]) -> EditPath:
    """Minimal unit-cost edit path from ``src`` to ``tgt``.

    Co-optimal choices are resolved while backtracking in the order
    KEEP, SUB, INS, DEL.
    """
    if len(src) == 0:
        raise ValueError("edit_path needs a non-empty source sequence")
    d = distance_table(src, tgt)
    i, j = len(src), len(tgt)
    ops: list[EditOp] = []
    while i > 0 or j > 0:
        here = d[i][j]
        if i > 0 and j > 0 and src[i - 1] == tgt[j - 1] and here == d[i - 1][j - 1]:
            ops.append(EditOp(KEEP, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and src[i - 1] != tgt[j - 1] and here == d[i - 1][j - 1] + 1:
            ops.append(EditOp(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif j > 0 and here == d[i][j - 1] + 1:
            ops.append(EditOp(INS, None, j - 1))
            j -= 1
        else:
            ops.append(EditOp(DEL, i - 1, None))
            i -= 1
    ops.reverse()
    return EditPath(ops, d[len(src)][len(tgt)])


def source_spans(path: EditPath, n: int) -> list[list[int]]:
    """Target indices owned by each source token.

    Insertions attach to the nearest preceding surviving source token, or to the
    first surviving token when nothing precedes them.
    """
    spans: list[list[int]] = [[] for _ in range(n)]
    deleted = [False] * n
    seen = [False] * n
    pending: list[int] = []
    anchor: int | None = None
    for op in path.ops:
        if op.op in (KEEP, SUB, DEL):
            if op.src is None or not 0 <= op.src < n or seen[op.src]:
                raise RuntimeError(f"inconsistent edit path at {op}")
            seen[op.src] = True
        if op.op == DEL:
            deleted[op.src] = True
        elif op.op in (KEEP, SUB):
            spans[op.src].append(op.tgt)
            anchor = op.src
            if pending:
                spans[op.src][:0] = pending
                pending = []
        elif op.op == INS:
            if anchor is None:
                pending.append(op.tgt)
            else:
                spans[anchor].append(op.tgt)
    if not all(seen):
        raise RuntimeError(f"edit path covers {sum(seen)} of {n} source tokens")
    if pending:
        raise RuntimeError("insertions with no surviving source token to attach to")
    return spans


def path_to_tags(path: EditPath, n: int) -> TagSeq:
    spans = source_spans(path, n)
    kept = {op.src for op in path.ops if op.op == KEEP}
    tags = []
    for i, span in enumerate(spans):
        if not span:
            tags.append(0)
        elif len(span) == 1 and i in kept:
            tags.append(1)
        else:
            tags.append(-len(span))
    return TagSeq(tags)


def alignment_tags(src: Sequence[Hashable], tgt: Sequence[Hashable]) -> TagSeq:
    return path_to_tags(edit_path(src, tgt), len(src))


def adjust_source(src: Sequence, tags: TagSeq | Sequence[int]) -> list:
    """Drop, keep or repeat source tokens so the result has ``sum(|t|)`` entries.

    An all-delete tag sequence would leave the decoder with nothing to read, so
    the largest-magnitude position (the first one on ties) is kept once.
    """
    tags = list(tags)
    if len(tags) != len(src):
        raise ValueError(f"{len(tags)} tags for {len(src)} source tokens")
    if tags and all(t == 0 for t in tags):
        tags[max(range(len(tags)), key=lambda i: abs(tags[i]))] = 1
    out = []
    for tok, t in zip(src, tags):
        out.extend([tok] * abs(t))
    return out
