"""Dense 2-D tensor arithmetic with a reverse-mode autodiff tape.

Every model operation is built from the functions in this module. Tensors wrap a
numpy array; operations record a backward closure and their parents whenever
gradient recording is enabled and at least one input requires a gradient.

Broadcasting is limited to adding a bias vector over the last dimension. Any
other shape disagreement raises :class:`ShapeError`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
LN_EPS = 1e-5

_state = threading.local()


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = _op
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this tensor to every ancestor.

        The graph is released afterwards; calling ``backward`` again on the same
        root without rebuilding it raises :class:`GraphError`.
        """
        if self._released:
            raise GraphError("backward called twice on the same graph; re-run the forward pass")
        if not self.requires_grad:
            raise GraphError("tensor does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"implicit gradient only for scalar outputs, got shape {self.shape}")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._backward = None
            node._parents = ()
        self._released = True


def _result(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward) -> Tensor:
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a vector matching the last dimension of ``a``."""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.data.ndim - 1))
        return _result(a.data + b.data, (a, b), "add_bias", lambda g: (g, g.sum(axis=axes)))
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _result(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), "scale", lambda g: (g * c,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot take maximum of shapes {a.shape} and {b.shape}")
    pick_a = a.data >= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        "maximum",
        lambda g: (np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return _result(x.data**2, (x,), "square", lambda g: (2.0 * x.data * g,))


def total(x: Tensor) -> Tensor:
    return _result(np.array(x.data.sum()), (x,), "sum", lambda g: (np.full(x.shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _result(np.array(x.data.mean()), (x,), "mean", lambda g: (np.full(x.shape, float(g) / n),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout. Identity unless ``training`` and ``p > 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), "matmul", lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows needs equal widths, got {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), "concat_rows", back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros(x.shape)
        full[start:stop] = g
        return (full,)

    return _result(x.data[start:stop], (x,), "slice_rows", back)


def pad_rows(x: Tensor, rows: int) -> Tensor:
    """Zero-pad ``x`` at the bottom to ``rows`` rows."""
    if rows < x.shape[0]:
        raise ShapeError(f"cannot pad {x.shape[0]} rows down to {rows}")
    out = np.zeros((rows,) + x.shape[1:])
    out[: x.shape[0]] = x.data
    n = x.shape[0]
    return _result(out, (x,), "pad_rows", lambda g: (g[:n],))


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), "embedding", back)


# ---------------------------------------------------------------------------
# normalisation and attention


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def softmax_rows(x: Tensor) -> Tensor:
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax_rows received NaN input")
    y = _softmax(x.data)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), "softmax_rows", back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs at least 2 features")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}, {bias.shape} do not match {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    axes = tuple(range(x.data.ndim - 1))

    def back(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", back)


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    causal: bool = False,
    probe: list | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention on already-projected inputs.

    ``q`` is ``[r, d]``, ``k`` and ``v`` are ``[c, d]``. Heads split the feature
    dimension; each head scales scores by ``sqrt(d / n_heads)``. With
    ``causal`` set, query ``i`` only sees keys ``j <= i + (c - r)``. When
    ``probe`` is a list, the ``[heads, r, c]`` weight array is appended to it.
    """
    r, d = q.shape
    c = k.shape[0]
    if k.shape != (c, d) or v.shape != (c, d):
        raise ShapeError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    if d % n_heads:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    dk = d // n_heads
    s = 1.0 / np.sqrt(dk)
    qh = q.data.reshape(r, n_heads, dk).transpose(1, 0, 2)
    kh = k.data.reshape(c, n_heads, dk).transpose(1, 0, 2)
    vh = v.data.reshape(c, n_heads, dk).transpose(1, 0, 2)
    scores = (qh @ kh.transpose(0, 2, 1)) * s
    if causal:
        blocked = np.triu(np.ones((r, c), dtype=bool), k=c - r + 1)
        scores = np.where(blocked, -np.inf, scores)
    p = _softmax(scores)
    if probe is not None:
        probe.append(p)
    out = (p @ vh).transpose(1, 0, 2).reshape(r, d)

    def back(g):
        gh = g.reshape(r, n_heads, dk).transpose(1, 0, 2)
        dv = p.transpose(0, 2, 1) @ gh
        dp = gh @ vh.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * s
        dq = ds @ kh
        dkk = ds.transpose(0, 2, 1) @ qh
        merge = lambda t, rows: t.transpose(1, 0, 2).reshape(rows, d)  # noqa: E731
        return merge(dq, r), merge(dkk, c), merge(dv, c)

    return _result(out, (q, k, v), "attention", back)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-length 1-D convolution over rows. ``w`` is ``[kernel, c_in, c_out]``."""
    length, c_in = x.shape
    kernel, w_in, c_out = w.shape
    if w_in != c_in or kernel % 2 == 0:
        raise ShapeError(f"conv1d needs odd kernel and matching channels: x{x.shape} w{w.shape}")
    half = kernel // 2
    padded = np.zeros((length + 2 * half, c_in))
    padded[half : half + length] = x.data
    cols = np.concatenate([padded[j : j + length] for j in range(kernel)], axis=1)
    wmat = w.data.reshape(kernel * c_in, c_out)

    def back(g):
        dcols = g @ wmat.T
        dpad = np.zeros_like(padded)
        for j in range(kernel):
            dpad[j : j + length] += dcols[:, j * c_in : (j + 1) * c_in]
        return dpad[half : half + length], (cols.T @ g).reshape(w.shape), g.sum(axis=0)

    return _result(cols @ wmat + b.data, (x, w, b), "conv1d", back)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets, smoothing: float = 0.0) -> Tensor:
    """Mean label-smoothed cross entropy over rows of ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    n, vocab = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"{n} logit rows but {targets.shape} targets")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    q = np.full((n, vocab), smoothing / vocab)
    q[np.arange(n), targets] += 1.0 - smoothing
    loss = -(q * logp).sum() / n
    return _result(np.array(loss), (logits,), "cross_entropy", lambda g: (float(g) * (np.exp(logp) - q) / n,))


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=DTYPE).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size
    return _result(np.array((diff**2).mean()), (pred,), "mse", lambda g: (float(g) * 2.0 * diff / n,))


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5) -> float:
    """Largest componentwise relative error between reverse-mode and central differences.

    ``f`` rebuilds the graph from ``params`` on each call and returns a scalar.
    The error per component is ``|ad - fd| / (|ad| + |fd| + 1e-12)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"non-finite loss {loss.data} at grad_check evaluation point")
    if loss.requires_grad:
        loss.backward()
    worst = 0.0
    with no_grad():
        for p in params:
            ad = p.grad if p.grad is not None else np.zeros(p.shape)
            flat = p.data.reshape(-1)
            fd = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(f().data)
                flat[i] = orig - step
                lo = float(f().data)
                flat[i] = orig
                fd[i] = (hi - lo) / (2.0 * step)
            if not np.isfinite(fd).all():
                raise FloatingPointError("non-finite loss while taking finite differences")
            err = np.abs(ad.reshape(-1) - fd) / (np.abs(ad.reshape(-1)) + np.abs(fd) + 1e-12)
            if err.size:
                worst = max(worst, float(err.max()))
    return worst
