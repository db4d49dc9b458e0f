"""Independent reference implementations used only by the tests."""

from functools import lru_cache
from itertools import product


def enumerate_path_costs(src, tgt):
    """Cost of every edit path from ``src`` to ``tgt``, by exhaustive recursion (no memo)."""
    costs = []

    def walk(i, j, cost):
        if i == len(src) and j == len(tgt):
            costs.append(cost)
            return
        if i < len(src) and j < len(tgt):
            walk(i + 1, j + 1, cost + (src[i] != tgt[j]))
        if i < len(src):
            walk(i + 1, j, cost + 1)
        if j < len(tgt):
            walk(i, j + 1, cost + 1)

    walk(0, 0, 0)
    return costs


def brute_edit_distance(src, tgt) -> int:
    return min(enumerate_path_costs(tuple(src), tuple(tgt)))


def levenshtein(a, b) -> int:
    """Textbook recursive definition over suffixes, memoised."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(d(i + 1, j) + 1, d(i, j + 1) + 1, d(i + 1, j + 1) + (a[i] != b[j]))

    return d(0, 0)


def all_sequences(alphabet, min_len, max_len):
    for n in range(min_len, max_len + 1):
        yield from product(alphabet, repeat=n)
