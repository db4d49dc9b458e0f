"""WER, WER reduction and edit-level detection/correction scores.

Token attribution across the (hypothesis, corrected, reference) triple uses the
deterministic alignments from :mod:`patcorrect.align`: a hypothesis token is an
*error* when align(hyp -> ref) does not tag it as kept, and *edited* when
align(hyp -> corrected) does not tag it as kept.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .align import edit_distance, edit_path, source_spans

BETA = 0.5


def wer(hyp: Sequence[str], ref: Sequence[str]) -> float:
    if len(ref) == 0:
        raise ValueError("reference must be non-empty")
    return edit_path(ref, hyp).total_cost / len(ref)


def werr(wer_base: float, wer_sys: float) -> float:
    """Relative WER reduction as a fraction of the baseline WER."""
    if wer_base <= 0:
        raise ValueError("WERR is undefined for a zero baseline WER")
    return (wer_base - wer_sys) / wer_base


def f_beta(precision: float, recall: float, beta: float = BETA) -> float:
    if precision == 0 and recall == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * precision * recall / (b2 * precision + recall)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _aligned(hyp: Sequence[str], other: Sequence[str]):
    path = edit_path(hyp, other)
    spans = source_spans(path, len(hyp))
    kept = {op.src for op in path.ops if op.op == "KEEP"}
    changed = {i for i, span in enumerate(spans) if not (len(span) == 1 and i in kept)}
    return changed, [[other[j] for j in span] for span in spans]


def edit_counts(hyp: Sequence[str], corrected: Sequence[str], ref: Sequence[str]) -> dict[str, int]:
    if len(hyp) == 0:
        return {"edited": 0, "error": 0, "edited_error": 0, "correctly_edited_error": 0}
    error, ref_spans = _aligned(hyp, ref)
    edited, cor_spans = _aligned(hyp, corrected)
    both = error & edited
    good = sum(1 for i in both if cor_spans[i] == ref_spans[i])
    return {"edited": len(edited), "error": len(error), "edited_error": len(both), "correctly_edited_error": good}


def detection_correction(hyp: Sequence[str], corrected: Sequence[str], ref: Sequence[str]) -> dict:
    c = edit_counts(hyp, corrected, ref)
    p = _ratio(c["edited_error"], c["edited"])
    r = _ratio(c["edited_error"], c["error"])
    return {
        "precision": p,
        "recall": r,
        "f05": f_beta(p, r),
        "correction": _ratio(c["correctly_edited_error"], c["edited_error"]),
        "counts": c,
    }


@dataclass
class EvalReport:
    wer_base: float
    wer_sys: float
    werr: float | None
    precision: float
    recall: float
    f_beta: float
    correction: float
    counts: dict = field(default_factory=dict)
    aggregation: str = "pooled"

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        pct = lambda x: "n/a" if x is None else f"{100 * x:.2f} %"  # noqa: E731
        rows = [
            ("WER (input)", pct(self.wer_base)),
            ("WER (corrected)", pct(self.wer_sys)),
            ("WERR", pct(self.werr)),
            ("Precision", pct(self.precision)),
            ("Recall", pct(self.recall)),
            ("F0.5", pct(self.f_beta)),
            ("Correction", pct(self.correction)),
        ]
        return "\n".join(f"{name:<16} {value:>9}" for name, value in rows)


Triple = tuple[Sequence[str], Sequence[str], Sequence[str]]


def evaluate(triples: Iterable[Triple]) -> EvalReport:
    """Corpus report with WERs pooled over all reference tokens."""
    dist_base = dist_sys = ref_tokens = 0
    tot = {"edited": 0, "error": 0, "edited_error": 0, "correctly_edited_error": 0}
    for hyp, cor, ref in triples:
        if len(ref) == 0:
            raise ValueError("reference must be non-empty")
        dist_base += edit_distance(ref, hyp)
        dist_sys += edit_distance(ref, cor)
        ref_tokens += len(ref)
        for k, v in edit_counts(hyp, cor, ref).items():
            tot[k] += v
    if ref_tokens == 0:
        raise ValueError("no sentences to evaluate")
    base, sys_ = dist_base / ref_tokens, dist_sys / ref_tokens
    p = _ratio(tot["edited_error"], tot["edited"])
    r = _ratio(tot["edited_error"], tot["error"])
    counts = dict(tot, ref_tokens=ref_tokens)
    counts["zero_denominators"] = [k for k, d in (("precision", "edited"), ("recall", "error"), ("correction", "edited_error")) if tot[d] == 0]
    return EvalReport(
        wer_base=base,
        wer_sys=sys_,
        werr=werr(base, sys_) if base > 0 else None,
        precision=p,
        recall=r,
        f_beta=f_beta(p, r),
        correction=_ratio(tot["correctly_edited_error"], tot["edited_error"]),
        counts=counts,
    )


def evaluate_groups(groups: Sequence[Iterable[Triple]], aggregation: str = "pooled") -> EvalReport:
    """Combine several corpora (e.g. one per upstream recogniser).

    ``pooled`` concatenates them; ``equal`` averages every per-group score with
    equal weight, which is how per-system tables are usually summarised.
    """
    groups = [list(g) for g in groups]
    if aggregation == "pooled":
        return evaluate([t for g in groups for t in g])
    if aggregation != "equal":
        raise ValueError(f"unknown aggregation {aggregation!r}")
    reports = [evaluate(g) for g in groups]
    avg = lambda xs: sum(xs) / len(xs)  # noqa: E731
    werrs = [r.werr for r in reports if r.werr is not None]
    counts: dict = {}
    for r in reports:
        for k, v in r.counts.items():
            if isinstance(v, int):
                counts[k] = counts.get(k, 0) + v
    counts["zero_denominators"] = sorted({k for r in reports for k in r.counts["zero_denominators"]})
    return EvalReport(
        wer_base=avg([r.wer_base for r in reports]),
        wer_sys=avg([r.wer_sys for r in reports]),
        werr=avg(werrs) if werrs else None,
        precision=avg([r.precision for r in reports]),
        recall=avg([r.recall for r in reports]),
        f_beta=avg([r.f_beta for r in reports]),
        correction=avg([r.correction for r in reports]),
        counts=counts,
        aggregation="equal",
    )
