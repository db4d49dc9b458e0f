"""Phoneme-augmented non-autoregressive correction network.

Two unshared transformer encoders read the word sequence and its phoneme
sequence. Their outputs are fused (concatenation, zero-padded addition or max,
or cross attention) and passed to a convolutional tag predictor that regresses
one signed edit tag per source word. The decoder reads the tag-adjusted source
without a causal mask and attends to the text encoder and then to the phoneme
encoder, so every output position is produced in one forward pass.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .textphon import Vocab

FUSIONS = ("concat", "add", "max", "cross_atten")
MAGIC = b"PATC1"


class LengthError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_h: int = 64
    n_layers_text: int = 2
    n_layers_phon: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    d_mlp: int = 128
    n_conv_tagp: int = 5
    conv_kernel: int = 3
    n_mlp_tagp: int = 2
    n_cross_blocks: int = 2
    dropout: float = 0.1
    fusion: str = "cross_atten"
    max_tag_magnitude: int = 4
    max_len: int = 256
    positional: bool = True
    decoder_phoneme_attention: bool = True

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by n_heads={self.n_heads}")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.n_mlp_tagp < 1 or self.max_tag_magnitude < 1:
            raise ValueError("n_mlp_tagp and max_tag_magnitude must be positive")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Transformer-base sizes: 512 hidden, 6 layers per stack, 8 heads."""
        base = dict(d_h=512, n_layers_text=6, n_layers_phon=6, n_layers_dec=6, n_heads=8, d_mlp=2048)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EncoderOut:
    H_w: Tensor
    H_p: Tensor

    @property
    def n(self) -> int:
        return self.H_w.shape[0]

    @property
    def m(self) -> int:
        return self.H_p.shape[0]


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple]:
    return {f"{prefix}.{x}": (d, d) for x in "qkvo"}


def _ln_shapes(prefix: str, d: int) -> dict[str, tuple]:
    return {f"{prefix}.g": (d,), f"{prefix}.b": (d,)}


def _ff_shapes(prefix: str, d: int, h: int) -> dict[str, tuple]:
    return {f"{prefix}.w1": (d, h), f"{prefix}.b1": (h,), f"{prefix}.w2": (h, d), f"{prefix}.b2": (d,)}


def param_shapes(cfg: ModelConfig, n_text: int, n_phon: int) -> dict[str, tuple]:
    """Name -> shape for every learnable tensor implied by ``cfg``."""
    d, h = cfg.d_h, cfg.d_mlp
    s: dict[str, tuple] = {"emb.text": (n_text, d), "emb.phon": (n_phon, d)}
    for enc, layers in (("text", cfg.n_layers_text), ("phon", cfg.n_layers_phon)):
        for i in range(layers):
            p = f"enc.{enc}.{i}"
            s |= _attn_shapes(f"{p}.attn", d) | _ln_shapes(f"{p}.ln1", d)
            s |= _ff_shapes(f"{p}.ff", d, h) | _ln_shapes(f"{p}.ln2", d)
    if cfg.fusion == "cross_atten":
        for b in range(cfg.n_cross_blocks):
            s |= _attn_shapes(f"fuse.{b}.attn", d) | _ln_shapes(f"fuse.{b}.ln", d)
    for i in range(cfg.n_conv_tagp):
        s[f"tagp.conv.{i}.w"] = (cfg.conv_kernel, d, d)
        s[f"tagp.conv.{i}.b"] = (d,)
        s |= _ln_shapes(f"tagp.conv.{i}.ln", d)
    for i in range(cfg.n_mlp_tagp):
        out = 1 if i == cfg.n_mlp_tagp - 1 else d
        s[f"tagp.mlp.{i}.w"] = (d, out)
        s[f"tagp.mlp.{i}.b"] = (out,)
    for i in range(cfg.n_layers_dec):
        p = f"dec.{i}"
        s |= _attn_shapes(f"{p}.self", d) | _ln_shapes(f"{p}.ln_self", d)
        s |= _attn_shapes(f"{p}.text", d) | _ln_shapes(f"{p}.ln_text", d)
        if cfg.decoder_phoneme_attention:
            s |= _attn_shapes(f"{p}.phon", d) | _ln_shapes(f"{p}.ln_phon", d)
        s |= _ff_shapes(f"{p}.ff", d, h) | _ln_shapes(f"{p}.ln_ff", d)
    s["out.w"] = (d, n_text)
    s["out.b"] = (n_text,)
    return s


def count_parameters(cfg: ModelConfig, n_text: int, n_phon: int) -> int:
    return int(sum(np.prod(shape) for shape in param_shapes(cfg, n_text, n_phon).values()))


def init_params(cfg: ModelConfig, n_text: int, n_phon: int, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg, n_text, n_phon).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("emb."):
            value = rng.normal(0.0, 1.0, shape)
        elif leaf == "g":
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / (fan_in + shape[-1]))
            value = rng.uniform(-limit, limit, shape)
        params[name] = nx.parameter(value)
    return params


def sinusoid_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = 1.0 / np.power(10000.0, (2 * (np.arange(d) // 2)) / d)
    table = pos * rate[None, :]
    table[:, 0::2] = np.sin(table[:, 0::2])
    table[:, 1::2] = np.cos(table[:, 1::2])
    return table


def fuse_concat(H_w: Tensor, H_p: Tensor) -> Tensor:
    """Stack text rows above phoneme rows: ``[(n + m), d]``."""
    if H_w.shape[1] != H_p.shape[1]:
        raise nx.ShapeError(f"hidden sizes differ: {H_w.shape} vs {H_p.shape}")
    return nx.concat_rows([H_w, H_p])


def fuse_pool(H_w: Tensor, H_p: Tensor, mode: str) -> Tensor:
    """Zero-pad the text rows to the phoneme length and add or max elementwise."""
    n, m = H_w.shape[0], H_p.shape[0]
    if m < n:
        raise ValueError(f"pool fusion needs m >= n, got n={n}, m={m}")
    if H_w.shape[1] != H_p.shape[1]:
        raise nx.ShapeError(f"hidden sizes differ: {H_w.shape} vs {H_p.shape}")
    padded = nx.pad_rows(H_w, m)
    if mode == "add":
        return nx.add(padded, H_p)
    if mode == "max":
        return nx.maximum(padded, H_p)
    raise ValueError(f"unknown pool mode {mode!r}")


class PATCorrect:
    """Network parameters plus the forward computations that use them."""

    def __init__(
        self,
        cfg: ModelConfig,
        text_vocab: Vocab,
        phon_vocab: Vocab,
        params: dict[str, Tensor] | None = None,
        seed: int = 0,
    ):
        self.cfg = cfg
        self.text_vocab = text_vocab
        self.phon_vocab = phon_vocab
        self.params = params if params is not None else init_params(cfg, len(text_vocab), len(phon_vocab), seed)
        expected = param_shapes(cfg, len(text_vocab), len(phon_vocab))
        got = {k: v.shape for k, v in self.params.items()}
        if got != expected:
            raise CheckpointError("parameter shapes do not match the model config and vocabularies")
        self._tls = threading.local()
        self._lock = threading.Lock()
        self.training = False
        self.rng = np.random.default_rng(seed)
        self.decoder_passes = 0
        self.attention_probe: list | None = None
        self._pe = sinusoid_table(cfg.max_len, cfg.d_h)

    @property
    def training(self) -> bool:
        # a thread inside inference() always sees eval mode, whatever other threads do
        local = getattr(self._tls, "training", None)
        return self._training if local is None else local

    @training.setter
    def training(self, value: bool) -> None:
        self._training = bool(value)

    @contextmanager
    def inference(self):
        """Eval mode for the calling thread only; safe to nest and to use concurrently."""
        prev = getattr(self._tls, "training", None)
        self._tls.training = False
        try:
            yield self
        finally:
            self._tls.training = prev

    def _count_pass(self) -> None:
        with self._lock:
            self.decoder_passes += 1
        self._tls.passes = getattr(self._tls, "passes", 0) + 1

    def thread_passes(self) -> int:
        """Decoder passes run so far by the calling thread."""
        return getattr(self._tls, "passes", 0)

    # -- building blocks --------------------------------------------------

    def _embed(self, table: str, ids: Sequence[int]) -> Tensor:
        if len(ids) > self.cfg.max_len:
            raise LengthError(f"sequence of length {len(ids)} exceeds max_len={self.cfg.max_len}")
        x = nx.embedding(self.params[table], ids)
        if self.cfg.positional:
            x = nx.add(x, Tensor(self._pe[: len(ids)]))
        return x

    def _drop(self, x: Tensor) -> Tensor:
        return nx.dropout(x, self.cfg.dropout, self.rng, self.training)

    def _mha(self, prefix: str, query: Tensor, memory: Tensor, causal: bool = False) -> Tensor:
        P = self.params
        k = nx.matmul(memory, P[f"{prefix}.k"])
        v = nx.matmul(memory, P[f"{prefix}.v"])
        return self._mha_kv(prefix, query, k, v, causal)

    def _mha_kv(self, prefix: str, query: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
        P = self.params
        q = nx.matmul(query, P[f"{prefix}.q"])
        out = nx.attention(q, k, v, self.cfg.n_heads, causal=causal, probe=self.attention_probe)
        return nx.matmul(out, P[f"{prefix}.o"])

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _residual(self, ln: str, x: Tensor, sub: Tensor) -> Tensor:
        return self._norm(ln, nx.add(x, self._drop(sub)))

    def _ff(self, prefix: str, x: Tensor) -> Tensor:
        P = self.params
        h = nx.relu(nx.linear(x, P[f"{prefix}.w1"], P[f"{prefix}.b1"]))
        return nx.linear(self._drop(h), P[f"{prefix}.w2"], P[f"{prefix}.b2"])

    def _encoder(self, name: str, x: Tensor, layers: int) -> Tensor:
        for i in range(layers):
            p = f"enc.{name}.{i}"
            x = self._residual(f"{p}.ln1", x, self._mha(f"{p}.attn", x, x))
            x = self._residual(f"{p}.ln2", x, self._ff(f"{p}.ff", x))
        return x

    # -- public forward pieces -------------------------------------------

    def encode(self, w_ids: Sequence[int], p_ids: Sequence[int]) -> EncoderOut:
        if len(w_ids) == 0 or len(p_ids) == 0:
            raise ValueError("encode needs non-empty word and phoneme sequences")
        H_w = self._encoder("text", self._drop(self._embed("emb.text", w_ids)), self.cfg.n_layers_text)
        H_p = self._encoder("phon", self._drop(self._embed("emb.phon", p_ids)), self.cfg.n_layers_phon)
        return EncoderOut(H_w, H_p)

    def fuse_cross(self, H_w: Tensor, H_p: Tensor) -> Tensor:
        h = H_w
        for b in range(self.cfg.n_cross_blocks):
            h = self._residual(f"fuse.{b}.ln", h, self._mha(f"fuse.{b}.attn", h, H_p))
        return h

    def fuse(self, enc: EncoderOut) -> Tensor:
        mode = self.cfg.fusion
        if mode == "concat":
            return fuse_concat(enc.H_w, enc.H_p)
        if mode in ("add", "max"):
            return fuse_pool(enc.H_w, enc.H_p, mode)
        return self.fuse_cross(enc.H_w, enc.H_p)

    def tag_predict(self, H_s: Tensor, n: int) -> Tensor:
        """Real-valued tag per position, cropped to the first ``n`` rows."""
        P = self.params
        x = H_s
        for i in range(self.cfg.n_conv_tagp):
            p = f"tagp.conv.{i}"
            x = nx.relu(nx.conv1d(x, P[f"{p}.w"], P[f"{p}.b"]))
            x = self._drop(self._norm(f"{p}.ln", x))
        last = self.cfg.n_mlp_tagp - 1
        for i in range(self.cfg.n_mlp_tagp):
            x = nx.linear(x, P[f"tagp.mlp.{i}.w"], P[f"tagp.mlp.{i}.b"])
            if i < last:
                x = nx.relu(x)
        return x if x.shape[0] == n else nx.slice_rows(x, 0, n)

    def predict_tags(self, enc: EncoderOut) -> Tensor:
        return self.tag_predict(self.fuse(enc), enc.n)

    def _decoder_layers(self, x: Tensor, enc: EncoderOut, causal: bool) -> Tensor:
        for i in range(self.cfg.n_layers_dec):
            p = f"dec.{i}"
            x = self._residual(f"{p}.ln_self", x, self._mha(f"{p}.self", x, x, causal=causal))
            x = self._residual(f"{p}.ln_text", x, self._mha(f"{p}.text", x, enc.H_w))
            if self.cfg.decoder_phoneme_attention:
                x = self._residual(f"{p}.ln_phon", x, self._mha(f"{p}.phon", x, enc.H_p))
            x = self._residual(f"{p}.ln_ff", x, self._ff(f"{p}.ff", x))
        return nx.linear(x, self.params["out.w"], self.params["out.b"])

    def decode(self, adj_ids: Sequence[int], enc: EncoderOut) -> Tensor:
        """Logits ``[n_hat, |V|]`` for every output position in a single pass."""
        if len(adj_ids) == 0:
            raise ValueError("decoder input is empty")
        self._count_pass()
        x = self._drop(self._embed("emb.text", adj_ids))
        return self._decoder_layers(x, enc, causal=False)

    def decode_step(self, prefix_ids: Sequence[int], enc: EncoderOut) -> Tensor:
        """Causally masked pass over ``prefix_ids``; returns logits of the last position."""
        self._count_pass()
        x = self._drop(self._embed("emb.text", prefix_ids))
        logits = self._decoder_layers(x, enc, causal=True)
        return nx.slice_rows(logits, logits.shape[0] - 1, logits.shape[0])

    def start_incremental(self, enc: EncoderOut) -> dict:
        """State for :meth:`decode_next`: projected encoder memories and empty self-attention caches."""
        P = self.params
        cache: dict = {"pos": 0, "self": {i: ([], []) for i in range(self.cfg.n_layers_dec)}, "mem": {}}
        for i in range(self.cfg.n_layers_dec):
            sources = [("text", enc.H_w)] + ([("phon", enc.H_p)] if self.cfg.decoder_phoneme_attention else [])
            for name, memory in sources:
                p = f"dec.{i}.{name}"
                cache["mem"][p] = (nx.matmul(memory, P[f"{p}.k"]), nx.matmul(memory, P[f"{p}.v"]))
        return cache

    def decode_next(self, token_id: int, cache: dict) -> Tensor:
        """One single-position decoder pass reusing cached keys and values. Returns ``[1, |V|]`` logits."""
        pos = cache["pos"]
        if pos >= self.cfg.max_len:
            raise LengthError(f"position {pos} exceeds max_len={self.cfg.max_len}")
        self._count_pass()
        P = self.params
        x = nx.embedding(P["emb.text"], [token_id])
        if self.cfg.positional:
            x = nx.add(x, Tensor(self._pe[pos : pos + 1]))
        for i in range(self.cfg.n_layers_dec):
            p = f"dec.{i}"
            keys, values = cache["self"][i]
            keys.append(nx.matmul(x, P[f"{p}.self.k"]).data)
            values.append(nx.matmul(x, P[f"{p}.self.v"]).data)
            k, v = Tensor(np.vstack(keys)), Tensor(np.vstack(values))
            x = self._residual(f"{p}.ln_self", x, self._mha_kv(f"{p}.self", x, k, v))
            x = self._residual(f"{p}.ln_text", x, self._mha_kv(f"{p}.text", x, *cache["mem"][f"{p}.text"]))
            if self.cfg.decoder_phoneme_attention:
                x = self._residual(f"{p}.ln_phon", x, self._mha_kv(f"{p}.phon", x, *cache["mem"][f"{p}.phon"]))
            x = self._residual(f"{p}.ln_ff", x, self._ff(f"{p}.ff", x))
        cache["pos"] = pos + 1
        return nx.linear(x, P["out.w"], P["out.b"])

    def forward(self, w_ids, p_ids, adj_ids) -> tuple[Tensor, Tensor]:
        enc = self.encode(w_ids, p_ids)
        return self.predict_tags(enc), self.decode(adj_ids, enc)

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path, extra: dict[str, np.ndarray] | None = None, state: dict | None = None) -> None:
        save_checkpoint(path, self, extra=extra, state=state)

    @classmethod
    def load(cls, path: str | Path) -> "PATCorrect":
        return load_checkpoint(path).model


def _vocab_hash(v: Vocab) -> str:
    return hashlib.sha256("\n".join(v.symbols).encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    model: PATCorrect
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict = field(default_factory=dict)


def save_checkpoint(path, model: PATCorrect, extra=None, state=None) -> None:
    """Write ``PATC1`` magic, an 8-byte manifest length, the JSON manifest, then raw ``<f8`` values."""
    arrays = [(name, t.data) for name, t in model.params.items()]
    arrays += [(name, np.asarray(a, dtype=np.float64)) for name, a in (extra or {}).items()]
    entries, offset = [], 0
    for name, a in arrays:
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    manifest = {
        "format": MAGIC.decode(),
        "dtype": "<f8",
        "config": asdict(model.cfg),
        "vocab": {"text": model.text_vocab.symbols, "phoneme": model.phon_vocab.symbols},
        "vocab_hashes": {"text": _vocab_hash(model.text_vocab), "phoneme": _vocab_hash(model.phon_vocab)},
        "params": entries[: len(model.params)],
        "extra": entries[len(model.params) :],
        "state": state or {},
    }
    blob = json.dumps(manifest).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC + b"\n"):
        raise CheckpointError(f"{path} is not a PATC1 checkpoint")
    head = len(MAGIC) + 1
    (size,) = struct.unpack("<Q", raw[head : head + 8])
    try:
        manifest = json.loads(raw[head + 8 : head + 8 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest") from exc
    body = raw[head + 8 + size :]
    entries = manifest["params"] + manifest["extra"]
    expected = sum(int(np.prod(e["shape"])) for e in entries)
    if len(body) != 8 * expected:
        raise CheckpointError(f"{path}: expected {expected} values, found {len(body) / 8:g}")
    values = np.frombuffer(body, dtype="<f8")
    text_vocab = Vocab.from_symbols(manifest["vocab"]["text"])
    phon_vocab = Vocab.from_symbols(manifest["vocab"]["phoneme"])
    if _vocab_hash(text_vocab) != manifest["vocab_hashes"]["text"] or _vocab_hash(phon_vocab) != manifest["vocab_hashes"]["phoneme"]:
        raise CheckpointError("vocabulary hash mismatch")
    cfg = ModelConfig.from_dict(manifest["config"])

    def take(entry):
        n = int(np.prod(entry["shape"]))
        return values[entry["offset"] : entry["offset"] + n].reshape(entry["shape"]).astype(np.float64)

    params = {e["name"]: nx.parameter(take(e)) for e in manifest["params"]}
    model = PATCorrect(cfg, text_vocab, phon_vocab, params=params)
    extra = {e["name"]: take(e) for e in manifest["extra"]}
    return Checkpoint(model, extra, manifest.get("state", {}))
