"""Dense tanh networks with hand-written backprop, Adam, and JSON checkpoints.

An :class:`Mlp` ends in one linear layer whose outputs are split into
heads. Categorical heads are read through a softmax; scalar heads are
used raw. :meth:`Mlp.backward` takes gradients with respect to these raw
outputs (logits for categorical heads).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "green-oran-mlp/1"
HEAD_KINDS = ("categorical", "scalar")


class CheckpointError(ValueError):
    """A checkpoint file could not be parsed; the message names the location."""


@dataclass(frozen=True)
class HeadGroup:
    """A run of consecutive heads with the same kind and size."""

    kind: str
    size: int
    count: int
    offset: int

    @property
    def stop(self) -> int:
        return self.offset + self.size * self.count


def group_heads(heads) -> list[HeadGroup]:
    groups, offset = [], 0
    for size, kind in heads:
        if kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {kind!r}")
        if size < 1:
            raise ValueError("head size must be >= 1")
        g = groups[-1] if groups else None
        if g is not None and g.kind == kind and g.size == size:
            groups[-1] = HeadGroup(kind, size, g.count + 1, g.offset)
        else:
            groups.append(HeadGroup(kind, size, 1, offset))
        offset += size
    return groups


class Mlp:
    def __init__(self, layer_dims, heads, rng=None, activation: str = "tanh"):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise ValueError(f"invalid layer dims {layer_dims}")
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.heads = [(int(s), str(k)) for s, k in heads]
        self.groups = group_heads(self.heads)
        self.layer_dims = dims
        self.activation = activation
        self.out_dim = sum(s for s, _ in self.heads)
        rng = np.random.default_rng(rng)
        chain = dims + [self.out_dim]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(chain[:-1], chain[1:]):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- parameters
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params) -> None:
        params = list(params)
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.__dict__.update(self.__dict__)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    # -- passes
    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else z

    def forward(self, x, return_cache: bool = False):
        """Raw outputs of shape (batch, out_dim); a 1-D input gives a 1-D output."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.layer_dims[0]}")
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else self._act(z)
            acts.append(h)
        out = h[0] if single else h
        return (out, acts) if return_cache else out

    def backward(self, cache, grad_out) -> list[np.ndarray]:
        """Parameter gradients given d(loss)/d(raw outputs), in params() order."""
        acts = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                if self.activation == "tanh":
                    g = g * (1.0 - acts[i] ** 2)
        return grads

    # -- heads
    def head_outputs(self, raw) -> list[np.ndarray]:
        """Per-head outputs: probability vectors or scalars."""
        raw = np.atleast_2d(raw)
        out = []
        for g in self.groups:
            block = raw[:, g.offset:g.stop].reshape(raw.shape[0], g.count, g.size)
            if g.kind == "categorical":
                block = np.exp(log_softmax(block))
            out.extend(block[:, i] if g.kind == "categorical" else block[:, i, 0] for i in range(g.count))
        return out

    def categorical_groups(self) -> list[HeadGroup]:
        return [g for g in self.groups if g.kind == "categorical"]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Log-softmax over the last axis, stabilised by max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=float)))


# ------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    lr: float
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float, **kw) -> "AdamState":
        return cls(lr=lr, first_moment=[np.zeros_like(p) for p in net.params()],
                   second_moment=[np.zeros_like(p) for p in net.params()], **kw)


def adam_step(net: Mlp, grads, opt: AdamState):
    """One bias-corrected Adam update, applied in place; returns (net, opt)."""
    b1, b2 = opt.betas
    opt.step_count += 1
    c1 = 1.0 - b1 ** opt.step_count
    c2 = 1.0 - b2 ** opt.step_count
    params = net.params()
    for p, g, m, v in zip(params, grads, opt.first_moment, opt.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net, opt


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_grad_norm(grads, max_norm: float):
    """Rescale so the global L2 norm is at most ``max_norm``; returns (grads, norm)."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


# ----------------------------------------------------------- checkpoints


def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a, dtype=float).ravel().tolist()}


def net_to_dict(net: Mlp, opt: AdamState | None = None) -> dict:
    d = {
        "layer_dims": net.layer_dims,
        "heads": [[s, k] for s, k in net.heads],
        "activation": net.activation,
        "params": [_arr(p) for p in net.params()],
    }
    if opt is not None:
        d["optimizer"] = {
            "lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps, "step_count": opt.step_count,
            "first_moment": [_arr(m) for m in opt.first_moment],
            "second_moment": [_arr(v) for v in opt.second_moment],
        }
    return d


def _need(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise CheckpointError(f"{where}: missing key {key!r}")
    return d[key]


def _read_arr(d, where, shape=None) -> np.ndarray:
    shp = _need(d, "shape", where)
    data = _need(d, "data", where)
    if shape is not None and tuple(shp) != tuple(shape):
        raise CheckpointError(f"{where}: shape {shp} does not match {list(shape)}")
    n = int(np.prod(shp)) if shp else 1
    if not isinstance(data, list) or len(data) != n:
        raise CheckpointError(f"{where}.data: expected {n} values")
    try:
        return np.array(data, dtype=float).reshape(shp)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}.data: {exc}") from None


def net_from_dict(d: dict, where: str = "$"):
    try:
        net = Mlp(_need(d, "layer_dims", where), _need(d, "heads", where), rng=0,
                  activation=d.get("activation", "tanh"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{where}: {exc}") from None
    shapes = [p.shape for p in net.params()]
    raw = _need(d, "params", where)
    if not isinstance(raw, list) or len(raw) != len(shapes):
        raise CheckpointError(f"{where}.params: expected {len(shapes)} arrays")
    net.set_params([_read_arr(p, f"{where}.params[{i}]", s) for i, (p, s) in enumerate(zip(raw, shapes))])
    opt = None
    if "optimizer" in d:
        o = d["optimizer"]
        w = f"{where}.optimizer"
        moms = {}
        for key in ("first_moment", "second_moment"):
            lst = _need(o, key, w)
            if not isinstance(lst, list) or len(lst) != len(shapes):
                raise CheckpointError(f"{w}.{key}: expected {len(shapes)} arrays")
            moms[key] = [_read_arr(a, f"{w}.{key}[{i}]", s) for i, (a, s) in enumerate(zip(lst, shapes))]
        opt = AdamState(lr=float(_need(o, "lr", w)), betas=tuple(_need(o, "betas", w)),
                        eps=float(_need(o, "eps", w)), step_count=int(_need(o, "step_count", w)), **moms)
    return net, opt


def save(net: Mlp, opt: AdamState | None, path, config_hash: str = "") -> None:
    """Write one network (and optionally its optimiser) as a JSON checkpoint."""
    save_bundle(path, {"net": (net, opt)}, config_hash)


def load(path):
    """Inverse of :func:`save`; returns (net, opt, config_hash)."""
    members, config_hash = load_bundle(path)
    if "net" not in members:
        raise CheckpointError(f"{path}: $.members: missing key 'net'")
    net, opt = members["net"]
    return net, opt, config_hash


def save_bundle(path, members: dict, config_hash: str = "") -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash,
        "members": {name: net_to_dict(net, opt) for name, (net, opt) in members.items()},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_bundle(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if _need(doc, "format", "$") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: $.format: unsupported {doc.get('format')!r}")
    raw = _need(doc, "members", "$")
    if not isinstance(raw, dict):
        raise CheckpointError(f"{path}: $.members: expected an object")
    try:
        members = {name: net_from_dict(d, f"$.members.{name}") for name, d in raw.items()}
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return members, str(doc.get("config_hash", ""))
