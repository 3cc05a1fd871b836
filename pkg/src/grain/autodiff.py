"""Reverse-mode automatic differentiation over numpy arrays.

Every trainable Parameter carries two independent gradient accumulators
(grad_ce and grad_aux) so that gradients from different losses can be kept
apart: backward() writes into exactly one channel and never touches the
other. Training runs use float32; verification code builds float64 graphs.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from enum import Enum

import numpy as np
from scipy import special

from .errors import ContractError, InputError, ParameterError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_uid_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording; forwards inside produce constant tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class GradChannel(Enum):
    """The two gradient channels: task cross-entropy vs. auxiliary losses."""

    CE = "ce"
    AUX = "aux"


class Tensor:
    """A node in the computation graph wrapping a numpy array.

    Tensors are immutable once created. Leaf tensors made from a Parameter
    remember their owner so backward() can accumulate into its channel
    buffers; interior nodes hold their parents and a vector-Jacobian product.
    """

    __slots__ = ("data", "parents", "vjp", "param", "needs_grad", "uid")

    def __init__(self, data, parents=(), vjp=None, param=None, needs_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.parents = parents
        self.vjp = vjp
        self.param = param
        self.needs_grad = needs_grad
        self.uid = next(_uid_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, uid={self.uid})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            return scale(self, float(other))
        return mul(self, _wrap(other, self.dtype))

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, dtype=None) -> Tensor:
    """Wrap raw data as a constant (non-differentiable) tensor."""
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tensor(x, dtype=dtype)


class Parameter:
    """Trainable array with separate CE and AUX gradient accumulators."""

    __slots__ = ("value", "grad_ce", "grad_aux", "trainable", "ce_seen", "aux_seen")

    def __init__(self, value, trainable: bool = True):
        self.value = np.asarray(value)
        self.grad_ce = np.zeros_like(self.value)
        self.grad_aux = np.zeros_like(self.value)
        self.trainable = trainable
        self.ce_seen = False
        self.aux_seen = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def tensor(self) -> Tensor:
        """Leaf graph node viewing the current value."""
        return Tensor(self.value, param=self, needs_grad=self.trainable and _grad_enabled)

    def grad_total(self) -> np.ndarray:
        return self.grad_ce + self.grad_aux

    def zero_grads(self):
        """Reset both accumulators to exact zero."""
        self.grad_ce.fill(0.0)
        self.grad_aux.fill(0.0)
        self.ce_seen = False
        self.aux_seen = False

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, trainable={self.trainable})"


def _node(data, parents, vjp) -> Tensor:
    if _grad_enabled and any(p.needs_grad for p in parents):
        return Tensor(data, parents=tuple(parents), vjp=vjp, needs_grad=True)
    return Tensor(data)


def _swap(a: np.ndarray) -> np.ndarray:
    return a.swapaxes(-1, -2)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; operands may carry leading batch dimensions."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    na, nb = a.needs_grad, b.needs_grad
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(g @ _swap(b_data), a_shape) if na else None
        gb = _unbroadcast(_swap(a_data) @ g, b_shape) if nb else None
        return ga, gb

    return _node(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 dims, got shape {a.shape}")
    na = a.needs_grad

    def vjp(g):
        return (_swap(g) if na else None,)

    return _node(_swap(a.data), (a,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    na, nb = a.needs_grad, b.needs_grad
    a_shape, b_shape = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(g, a_shape) if na else None
        gb = _unbroadcast(g, b_shape) if nb else None
        return ga, gb

    return _node(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}") from None
    na, nb = a.needs_grad, b.needs_grad
    a_shape, b_shape = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(g, a_shape) if na else None
        gb = -_unbroadcast(g, b_shape) if nb else None
        return ga, gb

    return _node(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from None
    na, nb = a.needs_grad, b.needs_grad
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(g * b_data, a_shape) if na else None
        gb = _unbroadcast(g * a_data, b_shape) if nb else None
        return ga, gb

    return _node(out, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    na = a.needs_grad

    def vjp(g):
        return (g * c if na else None,)

    return _node(a.data * c, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    """Sum every element into a 0-d scalar tensor."""
    na = a.needs_grad
    a_shape, a_dtype = a.shape, a.dtype

    def vjp(g):
        return (np.broadcast_to(g, a_shape).astype(a_dtype, copy=False) if na else None,)

    return _node(np.asarray(a.data.sum(), dtype=a.dtype), (a,), vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by row-max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    na = a.needs_grad

    def vjp(g):
        if not na:
            return (None,)
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _node(y, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact GeLU: x * Phi(x) with Phi the standard normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    out = x * cdf
    na = a.needs_grad

    def vjp(g):
        if not na:
            return (None,)
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _node(out, (a,), vjp)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row normalization over the last axis, then affine transform."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last dim {d}"
        )
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data
    na, ng, nb = a.needs_grad, gain.needs_grad, bias.needs_grad
    gain_data = gain.data

    def vjp(g):
        ga = None
        if na:
            gx = g * gain_data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            ga = (gx - m1 - xhat * m2) * inv_std
        ggain = (g * xhat).reshape(-1, d).sum(axis=0) if ng else None
        gbias = g.reshape(-1, d).sum(axis=0) if nb else None
        return ga, ggain, gbias

    return _node(out, (a, gain, bias), vjp)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def soft_cross_entropy(student_logits: Tensor, teacher_logits: Tensor, tau: float) -> Tensor:
    """Mean temperature-scaled cross-entropy between two logit batches.

    Both logit tensors have shape (batch, classes). Probabilities are
    softmax(z / tau); the result is the nonnegative-for-minimization loss
    mean_b( -sum_k p_teacher * log p_student ).
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"logit shapes differ: {student_logits.shape} vs {teacher_logits.shape}"
        )
    zs = student_logits.data / tau
    zt = teacher_logits.data / tau
    log_ps = _log_softmax(zs)
    pt = np.exp(_log_softmax(zt))
    batch = student_logits.shape[0]
    out = np.asarray(-(pt * log_ps).sum() / batch, dtype=student_logits.dtype)
    ns, nt = student_logits.needs_grad, teacher_logits.needs_grad

    def vjp(g):
        gs = gt = None
        if ns:
            ps = np.exp(log_ps)
            gs = g * (ps - pt) / (batch * tau)
        if nt:
            inner = (pt * log_ps).sum(axis=-1, keepdims=True)
            gt = g * (-pt * (log_ps - inner)) / (batch * tau)
        return gs, gt

    return _node(out, (student_logits, teacher_logits), vjp)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean hard-label cross-entropy from raw logits (batch, classes)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"bad shapes: logits {logits.shape}, labels {labels.shape}")
    log_p = _log_softmax(logits.data)
    batch = logits.shape[0]
    rows = np.arange(batch)
    out = np.asarray(-log_p[rows, labels].mean(), dtype=logits.dtype)
    nl = logits.needs_grad

    def vjp(g):
        if not nl:
            return (None,)
        p = np.exp(log_p)
        p[rows, labels] -= 1.0
        return (g * p / batch,)

    return _node(out, (logits,), vjp)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    size = diff.size
    out = np.asarray((diff * diff).sum() / size, dtype=a.dtype)
    na, nb = a.needs_grad, b.needs_grad

    def vjp(g):
        base = g * (2.0 / size) * diff
        return (base if na else None), (-base if nb else None)

    return _node(out, (a, b), vjp)


def embedding_lookup(weights: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `weights` by integer id; grads scatter-add back."""
    ids = np.asarray(ids)
    vocab = weights.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise InputError(
            f"token id out of range [0, {vocab}): min={ids.min()}, max={ids.max()}"
        )
    out = weights.data[ids]
    nw = weights.needs_grad
    w_shape, w_dtype = weights.shape, weights.dtype

    def vjp(g):
        if not nw:
            return (None,)
        gw = np.zeros(w_shape, dtype=w_dtype)
        np.add.at(gw, ids.ravel(), g.reshape(-1, w_shape[1]))
        return (gw,)

    return _node(out, (weights,), vjp)


def take_first(a: Tensor) -> Tensor:
    """Select the first position along axis 1 of a (batch, seq, dim) tensor."""
    if a.ndim != 3:
        raise ShapeError(f"take_first expects a 3-d tensor, got shape {a.shape}")
    out = a.data[:, 0, :].copy()
    na = a.needs_grad
    a_shape, a_dtype = a.shape, a.dtype

    def vjp(g):
        if not na:
            return (None,)
        ga = np.zeros(a_shape, dtype=a_dtype)
        ga[:, 0, :] = g
        return (ga,)

    return _node(out, (a,), vjp)


def take_rows(a: Tensor, n_rows: int) -> Tensor:
    """Keep the first `n_rows` rows of a 2-d tensor."""
    if a.ndim != 2 or not 0 <= n_rows <= a.shape[0]:
        raise ShapeError(f"cannot take {n_rows} rows from shape {a.shape}")
    out = a.data[:n_rows].copy()
    na = a.needs_grad
    a_shape, a_dtype = a.shape, a.dtype

    def vjp(g):
        if not na:
            return (None,)
        ga = np.zeros(a_shape, dtype=a_dtype)
        ga[:n_rows] = g
        return (ga,)

    return _node(out, (a,), vjp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    na = a.needs_grad

    def vjp(g):
        return (g * keep if na else None,)

    return _node(a.data * keep, (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in visited:
            continue
        visited.add(node.uid)
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and p.uid not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, channel: GradChannel):
    """Accumulate d(loss)/d(param) into one gradient channel of every
    trainable Parameter reachable from `loss`. The other channel is untouched.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not isinstance(channel, GradChannel):
        raise ContractError(f"unknown gradient channel: {channel!r}")
    if not loss.needs_grad:
        return
    grads = {loss.uid: np.ones((), dtype=loss.dtype)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(node.uid, None)
        if g is None:
            continue
        if node.param is not None and node.param.trainable:
            if channel is GradChannel.CE:
                node.param.grad_ce += g
                node.param.ce_seen = True
            else:
                node.param.grad_aux += g
                node.param.aux_seen = True
        if node.vjp is not None:
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.needs_grad:
                    continue
                acc = grads.get(parent.uid)
                grads[parent.uid] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(fn, inputs, eps: float = 1e-5, seed: int = 0) -> float:
    """Compare analytic gradients of `fn` against central differences.

    `fn` maps input Tensors to an output Tensor. Inputs are cast to float64.
    The output is reduced to a scalar with a fixed random projection so that
    every output element influences the check. Returns the worst relative
    error, with denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = [Parameter(np.array(x, dtype=np.float64)) for x in inputs]
    rng = np.random.default_rng(seed)
    out = fn(*[p.tensor() for p in params])
    proj = tensor(rng.standard_normal(out.shape), dtype=np.float64)
    backward(sum_all(mul(out, proj)), GradChannel.CE)

    def objective() -> float:
        with no_grad():
            val = fn(*[p.tensor() for p in params])
        return float((val.data * proj.data).sum())

    worst = 0.0
    for p in params:
        numeric = np.zeros_like(p.value)
        for idx in np.ndindex(p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + eps
            hi = objective()
            p.value[idx] = orig - eps
            lo = objective()
            p.value[idx] = orig
            numeric[idx] = (hi - lo) / (2.0 * eps)
        denom = np.maximum(np.maximum(np.abs(p.grad_ce), np.abs(numeric)), 1e-8)
        err = float((np.abs(p.grad_ce - numeric) / denom).max())
        worst = max(worst, err)
    return worst
