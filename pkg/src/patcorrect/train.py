"""Joint training of the tag predictor and the non-autoregressive decoder.

The objective is the sum of a label-smoothed token cross entropy on the decoder
output and a weighted mean-squared error between the regressed tags and the
alignment tags. Training is teacher forced: the decoder reads the source
adjusted by the ground-truth tags.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nx
from .align import TagSeq, adjust_source, alignment_tags
from .infer import correct_tokens
from .metrics import evaluate
from .model import PATCorrect, load_checkpoint
from .textphon import EmptySequenceError, PhonemeSeq, TokenSeq, Vocab, g2p, phoneme_inventory, tokenize

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_peak: float = 5e-4
    warmup_steps: int = 400
    max_batch_tokens: int = 1024
    label_smoothing: float = 0.1
    tag_loss_weight: float = 1.0
    epochs: int = 10
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9
    max_steps: int | None = None
    stop_wer: float | None = None
    eval_every: int = 1
    divergence_loss: float = 1e4

    def __post_init__(self):
        if self.lr_peak <= 0:
            raise ValueError("lr_peak must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        self.adam_betas = tuple(self.adam_betas)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainingExample:
    src: TokenSeq
    phon: PhonemeSeq
    tgt: TokenSeq
    tags: TagSeq
    adj: TokenSeq

    @property
    def tokens(self) -> int:
        return self.src.n + self.tgt.n


@dataclass
class Dataset:
    examples: list[TrainingExample]
    text_vocab: Vocab
    phon_vocab: Vocab
    skipped: int = 0
    dropped_empty: int = 0


def read_pairs(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def build_dataset(
    lines: Iterable[str],
    pron: dict[str, list[str]],
    text_vocab: Vocab | None = None,
    phon_vocab: Vocab | None = None,
) -> Dataset:
    """Tokenize ``source<TAB>target`` lines, attach phonemes, tags and the adjusted source.

    Without a text vocabulary one is built from both sides of the corpus. Lines
    without a tab or with an empty source are skipped; pairs whose target is
    empty are dropped. More than half the lines skipped is an error.
    """
    pairs: list[tuple[list[str], list[str]]] = []
    skipped = dropped = total = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        total += 1
        parts = line.split("\t")
        if len(parts) != 2:
            log.warning("line %d: expected 'source<TAB>target', skipping", lineno)
            skipped += 1
            continue
        try:
            src = tokenize(parts[0]).words
        except EmptySequenceError:
            log.warning("line %d: empty source, skipping", lineno)
            skipped += 1
            continue
        try:
            tgt = tokenize(parts[1]).words
        except EmptySequenceError:
            dropped += 1
            continue
        pairs.append((src, tgt))
    if total and skipped > total / 2:
        raise ValueError(f"{skipped} of {total} corpus lines are malformed")
    if dropped:
        log.info("dropped %d pairs with an empty target", dropped)
    if text_vocab is None:
        text_vocab = Vocab.for_text(w for s, t in pairs for w in s + t)
    if phon_vocab is None:
        phon_vocab = phoneme_inventory(pron)
    examples = []
    for src, tgt in pairs:
        tags = alignment_tags(src, tgt)
        adj = adjust_source(src, tags)
        examples.append(
            TrainingExample(
                src=TokenSeq(src, text_vocab.encode(src)),
                phon=g2p(src, pron, phon_vocab),
                tgt=TokenSeq(tgt, text_vocab.encode(tgt)),
                tags=tags,
                adj=TokenSeq(adj, text_vocab.encode(adj)),
            )
        )
    return Dataset(examples, text_vocab, phon_vocab, skipped, dropped)


def tag_targets(tags: TagSeq, max_tag_magnitude: int) -> np.ndarray:
    t = np.asarray(tags.tags, dtype=float)
    if t.size and t.min() < -max_tag_magnitude:
        log.warning("tag %d clamped to -%d", int(t.min()), max_tag_magnitude)
    return np.clip(t, -max_tag_magnitude, 1.0)


def loss(example: TrainingExample, model: PATCorrect, cfg: TrainConfig) -> tuple[nx.Tensor, dict[str, float]]:
    raw_tags, logits = model.forward(example.src.ids, example.phon.ids, example.adj.ids)
    token = nx.cross_entropy(logits, example.tgt.ids, cfg.label_smoothing)
    tag = nx.mse(raw_tags, tag_targets(example.tags, model.cfg.max_tag_magnitude))
    total = nx.add(token, nx.scale(tag, cfg.tag_loss_weight))
    value = float(total.data)
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss on example {' '.join(example.src.words)!r}")
    return total, {"token": float(token.data), "tag": float(tag.data)}


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup then inverse square-root decay; ``step`` counts from 1."""
    step = max(step, 1)
    warm = max(cfg.warmup_steps, 1)
    return cfg.lr_peak * min(step / warm, math.sqrt(warm / step))


class Adam:
    def __init__(self, params: dict[str, nx.Tensor], betas=(0.9, 0.98), eps=1e-9):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad**2
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for k in self.params:
            if f"adam.m.{k}" in arrays:
                self.m[k] = arrays[f"adam.m.{k}"].copy()
                self.v[k] = arrays[f"adam.v.{k}"].copy()
        self.t = t


def make_batches(examples: Sequence[TrainingExample], max_tokens: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, sort by length inside buckets of 64, pack greedily up to ``max_tokens``."""
    order = rng.permutation(len(examples))
    batches: list[list[int]] = []
    for start in range(0, len(order), 64):
        bucket = sorted(order[start : start + 64], key=lambda i: examples[i].tokens)
        current: list[int] = []
        used = 0
        for i in bucket:
            size = examples[i].tokens
            if current and used + size > max_tokens:
                batches.append(current)
                current, used = [], 0
            current.append(int(i))
            used += size
        if current:
            batches.append(current)
    return [batches[i] for i in rng.permutation(len(batches))]


def corpus_wer(model: PATCorrect, examples: Sequence[TrainingExample]) -> float:
    triples = []
    for ex in examples:
        out = correct_tokens(model, ex.src.words, ex.src.ids, ex.phon.ids)
        triples.append((ex.src.words, out.corrected.words, ex.tgt.words))
    return evaluate(triples).wer_sys


@dataclass
class TrainResult:
    model: PATCorrect
    history: list[dict] = field(default_factory=list)
    steps: int = 0
    stopped: str = "epochs"


def train_loop(
    dataset: Dataset,
    model: PATCorrect,
    cfg: TrainConfig,
    dev: Sequence[TrainingExample] | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam with warmup/inverse-sqrt schedule over token-budget batches.

    One JSON record per epoch goes to ``out_dir/metrics.jsonl`` along with
    ``last.patc`` and, when a dev set is given, ``best.patc``. ``stop_wer``
    ends training once the dev WER (training WER without a dev set) reaches it.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    opt = Adam(model.params, cfg.adam_betas, cfg.adam_eps)
    step, first_epoch = 0, 1
    if resume is not None:
        ckpt = load_checkpoint(resume)
        for k, t in ckpt.model.params.items():
            model.params[k].data[...] = t.data
        step = int(ckpt.state.get("step", 0))
        first_epoch = int(ckpt.state.get("epoch", 0)) + 1
        opt.load_state(ckpt.extra, step)
    model.rng = np.random.default_rng([cfg.seed, 1, first_epoch])
    result = TrainResult(model, steps=step)
    best = math.inf
    eval_set = dev if dev is not None else dataset.examples
    examples = dataset.examples
    if not examples:
        raise ValueError("empty training set")

    for epoch in range(first_epoch, first_epoch + cfg.epochs):
        t0 = time.perf_counter()
        model.training = True
        sums = {"loss": 0.0, "token": 0.0, "tag": 0.0}
        count = 0
        for batch in make_batches(examples, cfg.max_batch_tokens, np.random.default_rng([cfg.seed, epoch])):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            for p in model.params.values():
                p.grad = None
            batch_loss = 0.0
            for i in batch:
                total, parts = loss(examples[i], model, cfg)
                nx.scale(total, 1.0 / len(batch)).backward()
                batch_loss += float(total.data)
                sums["token"] += parts["token"]
                sums["tag"] += parts["tag"]
                count += 1
            sums["loss"] += batch_loss
            if batch_loss / len(batch) > cfg.divergence_loss:
                raise TrainingDiverged(f"loss {batch_loss / len(batch):.3g} at step {step + 1}")
            step += 1
            opt.step(lr_at(step, cfg))
        model.training = False
        record = {k: v / max(count, 1) for k, v in sums.items()}
        record.update(epoch=epoch, step=step, lr=lr_at(step, cfg), seconds=time.perf_counter() - t0)
        done_steps = cfg.max_steps is not None and step >= cfg.max_steps
        evaluate_now = dev is not None or cfg.stop_wer is not None
        if evaluate_now and (epoch % cfg.eval_every == 0 or done_steps):
            record["dev_wer" if dev is not None else "train_wer"] = corpus_wer(model, eval_set)
        result.history.append(record)
        result.steps = step
        if on_epoch is not None:
            on_epoch(record)
        if out is not None:
            with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
            state = {"step": step, "epoch": epoch, "train_config": asdict(cfg)}
            model.save(out / "last.patc", extra=opt.state_arrays(), state=state)
            if dev is not None and record.get("dev_wer", math.inf) < best:
                best = record["dev_wer"]
                model.save(out / "best.patc", state=state)
        wer_now = record.get("dev_wer", record.get("train_wer"))
        if cfg.stop_wer is not None and wer_now is not None and wer_now <= cfg.stop_wer:
            result.stopped = "stop_wer"
            break
        if done_steps:
            result.stopped = "max_steps"
            break
    return result
