"""Dense float64 tensors with a reverse-mode gradient tape.

Every op returns a new :class:`Tensor`; when any input requires a gradient
the result records its parents and a closure mapping the output gradient to
input gradients.  ``Tensor.backward`` walks the recorded graph once in
reverse topological order.  The graph is rebuilt on every forward pass.

Row-wise ops (``linear``, ``layer_norm``, ``attention``) are written so that
each output row is computed by exactly the same floating-point sequence
regardless of its position in the batch, which makes permutation laws hold
bitwise rather than approximately.
"""

import contextlib
import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError, VersionError

CHECKPOINT_VERSION = 1

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        order = _topological(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar; each resolves the module-level op at call time
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def silu(a):
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), "silu")


# ------------------------------------------------------------------ reductions


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1) if a.data.size else 1.0
    return _node(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,), "mean")


def norm(a, axis=-1):
    """Euclidean norm over ``axis``; the subgradient at zero is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * a.data,)

    return _node(out, (a,), backward, "norm")


# -------------------------------------------------------------------- shaping


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, ax1, ax2):
    axes = list(range(as_tensor(a).ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def getitem(a, idx):
    a = as_tensor(a)

    def backward(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _node(a.data[idx], (a,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward, "stack")


def cumsum(a, axis):
    a = as_tensor(a)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _node(np.cumsum(a.data, axis=axis), (a,), backward, "cumsum")


# ------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def _rowwise_matmul(x, w):
    # one single-row product per row: result bits never depend on row position
    lead = x.shape[:-1]
    out = x.reshape(-1, 1, x.shape[-1]) @ w
    return out.reshape(*lead, w.shape[-1])


def linear(x, W, b=None):
    """Affine map over the last axis: ``x @ W + b``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    out = _rowwise_matmul(x.data, W.data)
    parents = (x, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
        out = out + b.data
        parents = (x, W, b)

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        x2 = x.data.reshape(-1, W.shape[0])
        gx = (g2 @ W.data.T).reshape(x.shape)
        gW = x2.T @ g2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return _node(out, parents, backward, "linear")


def softmax(a, axis=-1):
    """Max-shifted softmax."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward, "softmax")


def layer_norm(x, gain=None, bias=None, eps=1e-5):
    """Normalize the last axis to zero mean and unit variance, then ``gain * . + bias``."""
    x = as_tensor(x)
    d = x.shape[-1]
    if d < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [x]
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        out = out * gain.data
        parents.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gx_hat = g * gain.data if gain is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _node(out, tuple(parents), backward, "layer_norm")


def _sorted_sum(a, axis):
    # summing a sorted copy makes the result independent of input order
    return np.sort(a, axis=axis).sum(axis=axis)


def attention(q, k, v):
    """Scaled dot-product attention over the last two axes.

    q: [..., Nq, dk], k: [..., Nk, dk], v: [..., Nk, dv] -> [..., Nq, dv].
    Reductions over keys are order-independent, so permuting the key/value
    rows together leaves the output bit-identical.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    if k.shape[-2] == 0:
        raise ShapeError("attention over an empty key set")
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = (q.data[..., :, None, :] * k.data[..., None, :, :]).sum(axis=-1) * scale
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    w = e / _sorted_sum(e, -1)[..., None]
    out = _sorted_sum(w[..., :, :, None] * v.data[..., None, :, :], -2)

    def backward(g):
        gv = np.swapaxes(w, -1, -2) @ g
        gw = g @ np.swapaxes(v.data, -1, -2)
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k.data
        gk = np.swapaxes(gs, -1, -2) @ q.data
        return gq, gk, gv

    return _node(out, (q, k, v), backward, "attention")


def huber(residual, delta):
    """Mean Huber penalty: ½r² inside ``|r| <= delta``, ``delta(|r| - delta/2)`` outside."""
    r = as_tensor(residual)
    if delta <= 0:
        raise ConfigError(f"huber delta must be positive, got {delta}")
    a = np.abs(r.data)
    vals = np.where(a <= delta, 0.5 * r.data * r.data, delta * (a - 0.5 * delta))
    n = max(r.data.size, 1)

    def backward(g):
        return (g * np.clip(r.data, -delta, delta) / n,)

    return _node(vals.sum() / n, (r,), backward, "huber")


# ------------------------------------------------------------ parameter store


class ParameterStore:
    """Named trainable tensors.

    Each parameter draws its initial values from a generator keyed by
    ``(seed, name)``, so a parameter's init does not depend on which other
    parameters were registered before it (ablated models share weights).
    """

    def __init__(self, seed=0):
        self.seed = seed
        self._params = {}

    def rng_for(self, name):
        return np.random.default_rng([int(self.seed), zlib.crc32(name.encode())])

    def add(self, name, data):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def uniform(self, name, shape, bound):
        return self.add(name, self.rng_for(name).uniform(-bound, bound, size=shape))

    def linear(self, name, d_in, d_out, bias=True):
        bound = 1.0 / math.sqrt(d_in)
        self.uniform(f"{name}.W", (d_in, d_out), bound)
        if bias:
            self.uniform(f"{name}.b", (d_out,), bound)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def subset(self, prefix):
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def num_parameters(self):
        return int(np.sum([p.size for p in self._params.values()]))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def state_dict(self):
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self._params[k].shape:
                raise ShapeError(f"parameter {k}: shape {arr.shape} != {self._params[k].shape}")
            self._params[k].data = arr.copy()


def linear_from(store, name, x):
    """Apply the linear layer registered under ``name`` (``.W`` and optional ``.b``)."""
    b = store[f"{name}.b"] if f"{name}.b" in store else None
    return linear(x, store[f"{name}.W"], b)


# ----------------------------------------------------------------------- adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, state):
    """One bias-corrected Adam update over every parameter; zeroes gradients after."""
    for name, p in store.items():
        if p.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in store.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericError(f"parameter {name!r} became non-finite at step {state.step}")
        p.grad = np.zeros_like(p.data)


# ------------------------------------------------------------------ grad check


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_coords: int


def grad_check(f, params, eps=1e-5, max_coords=None, seed=0, detail=False):
    """Compare reverse-mode gradients of scalar ``f(params)`` against central differences.

    ``params`` maps names to tensors; they are perturbed in place and restored.
    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    ``max_coords`` caps the coordinates probed per parameter (sampled with
    ``seed``); ``None`` probes all of them.
    """
    params = dict(params)
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    out = f(params)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("function value is not finite at the base point")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, "", (), 0)
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            flat = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        for i in flat:
            idx = np.unravel_index(i, p.shape)
            orig = p.data[idx]
            with no_grad():
                p.data[idx] = orig + eps
                fp = float(f(params).data)
                p.data[idx] = orig - eps
                fm = float(f(params).data)
            p.data[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"non-finite value while perturbing {name}{idx}")
            num = (fp - fm) / (2.0 * eps)
            a = float(analytic[idx])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst.n_coords += 1
            if err > worst.max_rel_error or not worst.worst_param:
                worst.max_rel_error, worst.worst_param, worst.worst_index = err, name, idx
    for p in params.values():
        p.grad = None
    return worst if detail else worst.max_rel_error


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(path, store, **meta):
    """Write parameters as JSON; float64 values survive the round trip bit-exactly."""
    doc = {"checkpoint_version": CHECKPOINT_VERSION}
    doc.update(meta)
    doc["parameters"] = {
        name: {"shape": list(t.shape), "data": [float(x) for x in t.data.ravel()]}
        for name, t in store.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(state_dict, meta)`` from a checkpoint file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint_version {version!r}, expected {CHECKPOINT_VERSION}")
    state = {}
    for name, entry in doc.get("parameters", {}).items():
        state[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    meta = {k: v for k, v in doc.items() if k not in ("parameters", "checkpoint_version")}
    return state, meta
