"""Small dense-tensor autodiff engine on top of numpy float64 arrays.

Operations record themselves on the active :class:`Tape` (if any) and the
tape replays them in reverse creation order during :meth:`Tape.backward`.
Outside a tape every op is a plain numpy computation, which is what the
inference paths use.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParamStore",
    "ShapeError",
    "affine",
    "add",
    "mul",
    "mish",
    "film",
    "mish_np",
    "softplus_np",
    "take_rows",
    "temporal_mix",
    "reshape",
    "concat",
    "mse_loss",
    "sum_all",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_ACTIVE: list["Tape"] = []


class Tape:
    """Append-only record of differentiable ops.

    Usage::

        with Tape() as tape:
            loss = mse_loss(model(x), y)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = gi
                else:
                    t.grad = t.grad + gi


def _recording(*inputs: Tensor) -> Tape | None:
    if not _ACTIVE:
        return None
    if any(t.requires_grad for t in inputs):
        return _ACTIVE[-1]
    return None


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _recording(*inputs)
    out = Tensor(data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def affine(x, W, bias=None) -> Tensor:
    """out = x @ W + bias for x of shape (b, n), W (n, m), bias (m,)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: x{x.shape} @ W{W.shape} does not conform")
    out = x.data @ W.data
    inputs = [x, W]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (W.shape[1],):
            raise ShapeError(f"affine: bias{bias.shape} vs output width {W.shape[1]}")
        out = out + bias.data
        inputs.append(bias)

    xd, Wd = x.data, W.data

    def backward(g):
        gx = g @ Wd.T if x.requires_grad else None
        gW = xd.T @ g if W.requires_grad else None
        if bias is None:
            return gx, gW
        return gx, gW, g.sum(axis=0)

    return _result(out, inputs, backward)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _result(a.data + b.data, [a, b], lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, [a, b], lambda g: (g * bd, g * ad))


def film(u, scale, shift) -> Tensor:
    """Feature-wise modulation ``u * (1 + scale) + shift`` (all same shape)."""
    u, scale, shift = as_tensor(u), as_tensor(scale), as_tensor(shift)
    _same_shape("film", u, scale)
    _same_shape("film", u, shift)
    ud, sd = u.data, scale.data
    return _result(ud * (1.0 + sd) + shift.data, [u, scale, shift],
                   lambda g: (g * (1.0 + sd), g * ud, g))


def softplus_np(x: np.ndarray) -> np.ndarray:
    # overflow-safe for large |x|
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def mish_np(x: np.ndarray) -> np.ndarray:
    return x * np.tanh(softplus_np(x))


def mish(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(-np.abs(xd))
    t = np.tanh(np.log1p(e) + np.maximum(xd, 0.0))
    out = xd * t

    def backward(g):
        # d/dx softplus = sigmoid(x), written with the same exp(-|x|)
        sig = np.where(xd >= 0, 1.0, e) / (1.0 + e)
        return (g * (t + xd * (1.0 - t * t) * sig),)

    return _result(out, [x], backward)


def take_rows(table, idx) -> Tensor:
    """Gather rows ``table[idx]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"take_rows: index out of range for {table.shape[0]} rows")
    nrows = table.shape[0]

    def backward(g):
        if nrows * idx.size <= 1 << 22:
            onehot = np.zeros((idx.size, nrows))
            onehot[np.arange(idx.size), idx] = 1.0
            return (onehot.T @ g,)
        gt = np.zeros((nrows, g.shape[1]))
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(table.data[idx], [table], backward)


def temporal_mix(h, w) -> Tensor:
    """Depthwise 1-D convolution over the frame axis with zero padding.

    h: (b, f, c); w: (kernel, c) with odd kernel. Tap ``d`` of the kernel reads
    frame ``j + d - kernel // 2``.
    """
    h, w = as_tensor(h), as_tensor(w)
    if h.data.ndim != 3 or w.data.ndim != 2 or w.shape[1] != h.shape[2] or w.shape[0] % 2 != 1:
        raise ShapeError(f"temporal_mix: h{h.shape} with kernel {w.shape}")
    ksize = w.shape[0]
    r = ksize // 2
    f = h.shape[1]
    hd, wd = h.data, w.data
    padded = np.pad(hd, ((0, 0), (r, r), (0, 0)))
    out = np.zeros_like(hd)
    for d in range(ksize):
        out += padded[:, d : d + f, :] * wd[d]

    def backward(g):
        gw = np.empty_like(wd)
        gpad = np.zeros_like(padded)
        for d in range(ksize):
            gw[d] = np.einsum("bfc,bfc->c", g, padded[:, d : d + f, :])
            gpad[:, d : d + f, :] += g * wd[d]
        return gpad[:, r : r + f, :], gw

    return _result(out, [h, w], backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {tuple(shape)}") from exc
    return _result(out, [x], lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, ts, backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _result(np.asarray(x.data.sum()), [x], lambda g: (np.full(shape, float(g)),))


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over all entries."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred{pred.shape} vs target{target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.sum(diff * diff) / n)

    def backward(g):
        gp = (2.0 / n) * float(g) * diff
        return gp, -gp

    return _result(out, [pred, target], backward)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered name -> parameter tensor map; gradients live on ``tensor.grad``."""

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        t = self._entries[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def count(self) -> int:
        return int(sum(t.data.size for t in self._entries.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._entries.items():
            out.add(name, t.data.copy())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._entries):
            missing = set(self._entries) ^ set(state)
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for name, t in self._entries.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: stored {arr.shape} vs expected {t.shape}")
            t.data = arr.copy()


def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-5,
               names: Sequence[str] | None = None, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must build its loss from ``params`` under whatever tape is active.
    With ``max_entries`` set, a random subset of coordinates per parameter is
    probed (the full denoiser has too many entries to difference them all).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-4]")
    params.zero_grad()
    with Tape() as tape:
        loss = f(params)
    base = float(loss.data)
    if not np.isfinite(base):
        raise FloatingPointError("non-finite loss at probe point")
    tape.backward(loss)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name in names or params.names():
        t = params[name]
        g_ad = params.grad(name).reshape(-1)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            up = float(f(params).data)
            flat[i] = old - eps
            down = float(f(params).data)
            flat[i] = old
            g_fd = (up - down) / (2 * eps)
            err = abs(g_ad[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    params.zero_grad()
    return worst
