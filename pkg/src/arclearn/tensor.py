"""Dense float64 tensors with define-by-run reverse-mode differentiation.

The computation record is rebuilt on every forward pass: each op returns a
new Tensor holding references to its parents and a closure that scatters the
output gradient back into them.  Parameters are leaf tensors carrying Adam
moments and the persisted power-iteration vector used for spectral-norm
estimation.

Broadcasting is restricted to python scalars (plus the dedicated
``add_bias`` op for trailing-axis bias vectors); everything else must match
shapes exactly.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GradientError, NumericError, ShapeError

Array = np.ndarray

_node_ids = itertools.count()
_finite_checks = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf detection on op outputs. Returns the previous setting."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = enabled
    return previous


def _check_finite(data: Array, op: str) -> None:
    if _finite_checks and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """Row-major float64 array participating in the computation record."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "node_id")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False,
                 op="tensor"):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, op)
        self.grad: Array | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable[[Array], None] | None = backward_fn
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the value with no graph history."""
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, id={self.node_id})"

    # operator sugar; scalars only, per the broadcast contract
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(data) -> Tensor:
    return Tensor(data)


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _make(data: Array, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, op=op)
    return Tensor(data, parents=parents, backward_fn=backward_fn,
                  requires_grad=True, op=op)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar root.

    Populates ``grad`` on every reachable tensor that requires gradients;
    repeated sweeps without clearing accumulate.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ "
                         "(only scalar broadcast is supported)")
    return a, b


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    # collapse a scalar-broadcast gradient back to the scalar operand
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    out_data = a.data + b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(g, b.data.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    out_data = a.data - b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(-g, b.data.shape))

    return _make(out_data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    out_data = a.data * b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _reduce_to(g * b.data, a.data.shape))
        _accumulate(b, _reduce_to(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    out_data = a.data / b.data

    def bwd(g: Array) -> None:
        _accumulate(a, _reduce_to(g / b.data, a.data.shape))
        _accumulate(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g: Array) -> None:
        _accumulate(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar."""
    a = as_tensor(a)
    c = float(c)

    def bwd(g: Array) -> None:
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), bwd, "scale")


def add_bias(x, b) -> Tensor:
    """x + b with b broadcast over the leading axes (b.shape == x.shape[-1:])."""
    x = as_tensor(x)
    b = as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match input {x.shape}")
    out_data = x.data + b.data

    def bwd(g: Array) -> None:
        _accumulate(x, g)
        _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _make(out_data, (x, b), bwd, "add_bias")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g * (1.0 - y * y))

    return _make(y, (a,), bwd, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    y = np.where(a.data >= 0, y, 1.0 - y)

    def bwd(g: Array) -> None:
        _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), bwd, "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    y = np.maximum(a.data, 0.0)

    def bwd(g: Array) -> None:
        _accumulate(a, g * (a.data > 0))

    return _make(y, (a,), bwd, "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g * y)

    return _make(y, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    y = np.log(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g / a.data)

    return _make(y, (a,), bwd, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def bwd(g: Array) -> None:
        _accumulate(a, g / (2.0 * y))

    return _make(y, (a,), bwd, "sqrt")


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = as_tensor(a)
    y = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0.0)

    def bwd(g: Array) -> None:
        s = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
        s = np.where(a.data >= 0, s, 1.0 - s)
        _accumulate(a, g * s)

    return _make(y, (a,), bwd, "softplus")


ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu,
               "add": add, "mul": mul, "scale": scale}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch by name over the supported pointwise ops."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ShapeError(f"unknown elementwise op '{op}'") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g: Array) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd, "matmul")


def bmm(a, b) -> Tensor:
    """Batched matmul over the leading axis: [B,m,k] @ [B,k,n] -> [B,m,n]."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] \
            or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bwd(g: Array) -> None:
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out_data, (a, b), bwd, "bmm")


# ---------------------------------------------------------------------------
# convolution (same padding, stride 1, square kernels)
# ---------------------------------------------------------------------------

def _conv_check(x: Tensor, k: Tensor) -> tuple[int, int, int, int, int]:
    if k.ndim != 4 or k.shape[2] != k.shape[3]:
        raise ShapeError(f"conv2d kernels must be [F,C,s,s], got {k.shape}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be [C,H,W] or [B,C,H,W], got {x.shape}")
    F, C, s, _ = k.shape
    if x.shape[-3] != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernels {k.shape}")
    H, W = x.shape[-2], x.shape[-1]
    if s > H or s > W:
        raise ShapeError(f"kernel size {s} exceeds input dims {H}x{W}")
    return F, C, s, H, W


def _pad_same(x: Array, s: int) -> tuple[Array, int]:
    pt = (s - 1) // 2
    pb = s - 1 - pt
    pad = [(0, 0)] * (x.ndim - 2) + [(pt, pb), (pt, pb)]
    return np.pad(x, pad), pt


def _im2col(xp: Array, s: int, H: int, W: int) -> Array:
    # xp: [B,C,H+s-1,W+s-1] -> [C*s*s, B*H*W]
    B, C = xp.shape[0], xp.shape[1]
    cols = np.empty((C, s, s, B, H, W), dtype=np.float64)
    for di in range(s):
        for dj in range(s):
            cols[:, di, dj] = np.moveaxis(xp[:, :, di:di + H, dj:dj + W], 0, 1)
    return cols.reshape(C * s * s, B * H * W)


def conv2d(x, kernels, bias=None, path: str = "im2col") -> Tensor:
    """Cross-correlation with zero same-padding, stride 1.

    ``path='im2col'`` lowers to a single matmul; ``path='direct'`` is the
    shift-and-add loop form.  Both share the padding convention and agree to
    tight tolerance; the loop form exists as a cross-check and for tests.
    """
    x = as_tensor(x)
    k = as_tensor(kernels)
    b = None if bias is None else as_tensor(bias)
    F, C, s, H, W = _conv_check(x, k)
    if b is not None and b.shape != (F,):
        raise ShapeError(f"conv2d bias must be [F], got {b.shape}")
    if path not in ("im2col", "direct"):
        raise ShapeError(f"unknown conv2d path '{path}'")

    batched = x.ndim == 4
    x4 = x.data if batched else x.data[None]
    B = x4.shape[0]
    xp, _ = _pad_same(x4, s)

    if path == "im2col":
        cols = _im2col(xp, s, H, W)
        kflat = k.data.reshape(F, C * s * s)
        y = (kflat @ cols).reshape(F, B, H, W)
        y = np.moveaxis(y, 0, 1)
    else:
        y = np.zeros((B, F, H, W), dtype=np.float64)
        for f in range(F):
            for c in range(C):
                for di in range(s):
                    for dj in range(s):
                        y[:, f] += k.data[f, c, di, dj] * xp[:, c, di:di + H, dj:dj + W]
    if b is not None:
        y = y + b.data[None, :, None, None]
    out_data = y if batched else y[0]

    def bwd(g: Array) -> None:
        g4 = g if batched else g[None]
        if b is not None:
            _accumulate(b, g4.sum(axis=(0, 2, 3)))
        if path == "im2col":
            cols = _im2col(xp, s, H, W)
            gflat = np.moveaxis(g4, 1, 0).reshape(F, B * H * W)
            dk = (gflat @ cols.T).reshape(F, C, s, s)
            dcols = (k.data.reshape(F, C * s * s).T @ gflat)
            dcols = dcols.reshape(C, s, s, B, H, W)
            dxp = np.zeros_like(xp)
            for di in range(s):
                for dj in range(s):
                    dxp[:, :, di:di + H, dj:dj + W] += np.moveaxis(dcols[:, di, dj], 1, 0)
        else:
            dk = np.zeros_like(k.data)
            dxp = np.zeros_like(xp)
            for f in range(F):
                for c in range(C):
                    for di in range(s):
                        for dj in range(s):
                            patch = xp[:, c, di:di + H, dj:dj + W]
                            dk[f, c, di, dj] = np.sum(g4[:, f] * patch)
                            dxp[:, c, di:di + H, dj:dj + W] += k.data[f, c, di, dj] * g4[:, f]
        pt = (s - 1) // 2
        dx = dxp[:, :, pt:pt + H, pt:pt + W]
        _accumulate(x, dx if batched else dx[0])

    parents = (x, k) if b is None else (x, k, b)
    return _make(out_data, parents, bwd, "conv2d")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g: Array) -> None:
        _accumulate(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes_t = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes_t))

    def bwd(g: Array) -> None:
        _accumulate(a, g.transpose(inv))

    return _make(a.data.transpose(axes_t), (a,), bwd, "transpose")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: Array) -> None:
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(out_data, ts, bwd, "concat")


def take(a, key) -> Tensor:
    """Basic (slice/int) indexing with scatter-back gradient."""
    a = as_tensor(a)
    out_data = a.data[key]

    def bwd(g: Array) -> None:
        buf = np.zeros_like(a.data)
        buf[key] += g
        _accumulate(a, buf)

    return _make(np.array(out_data), (a,), bwd, "take")


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select along one axis with an integer index vector (may repeat)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out_data = np.take(a.data, idx, axis=axis)

    def bwd(g: Array) -> None:
        buf = np.zeros_like(a.data)
        key = [slice(None)] * a.ndim
        key[axis] = idx
        np.add.at(buf, tuple(key), g)
        _accumulate(a, buf)

    return _make(out_data, (a,), bwd, "gather")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: Array) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g.reshape(()), a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape))

    return _make(out_data, (a,), bwd, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exclusive_cumprod(a) -> Tensor:
    """y_j = prod_{i<j} x_i over a 1-D tensor (y_0 = 1)."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"exclusive_cumprod expects 1-D input, got {a.shape}")
    n = a.data.shape[0]
    y = np.concatenate(([1.0], np.cumprod(a.data)[:-1]))

    def bwd(g: Array) -> None:
        # dy_j/dx_i = prod_{k<j, k!=i} x_k for i < j; recompute with x_i held at 1
        # so the formula stays exact when entries are zero
        da = np.zeros(n, dtype=np.float64)
        for i in range(n):
            masked = a.data.copy()
            masked[i] = 1.0
            prods = np.concatenate(([1.0], np.cumprod(masked)[:-1]))
            da[i] = np.dot(g[i + 1:], prods[i + 1:])
        _accumulate(a, da)

    return _make(y, (a,), bwd, "exclusive_cumprod")


# ---------------------------------------------------------------------------
# softmax / losses / normalization
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g: Array) -> None:
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _make(y, (a,), bwd, "softmax")


def log_softmax_data(x: Array, axis: int = -1) -> Array:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, target, axis: int = -1) -> Tensor:
    """Mean negative log-softmax of the target class over all positions.

    ``target`` must be one-hot along ``axis``; it is treated as a constant.
    """
    logits = as_tensor(logits)
    target = as_tensor(target)
    if logits.shape != target.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs target {target.shape}")
    tdata = target.data
    onehot = np.all((tdata == 0.0) | (tdata == 1.0)) and \
        np.allclose(tdata.sum(axis=axis), 1.0)
    if not onehot:
        raise ShapeError("cross_entropy target is not one-hot along the class axis")

    positions = logits.data.size // logits.data.shape[axis]
    logp = log_softmax_data(logits.data, axis=axis)
    out_data = -(tdata * logp).sum() / positions

    def bwd(g: Array) -> None:
        p = np.exp(logp)
        _accumulate(logits, float(g) * (p - tdata) / positions)

    return _make(out_data, (logits,), bwd, "cross_entropy")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must be [{d}]")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bwd(g: Array) -> None:
        lead = tuple(range(g.ndim - 1))
        _accumulate(gamma, (g * xhat).sum(axis=lead))
        _accumulate(beta, g.sum(axis=lead))
        d_ = g * gamma.data
        dx = (d_ - d_.mean(axis=-1, keepdims=True)
              - xhat * (d_ * xhat).mean(axis=-1, keepdims=True)) * inv
        _accumulate(x, dx)

    return _make(out_data, (x, gamma, beta), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------

class Parameter:
    """Trainable leaf tensor plus Adam moments and power-iteration state."""

    __slots__ = ("tensor", "adam_m", "adam_v", "adam_t", "power_vec")

    def __init__(self, data, rng: np.random.Generator | None = None):
        self.tensor = Tensor(data, requires_grad=True)
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.adam_t = 0
        if self.tensor.ndim >= 2:
            rng = rng if rng is not None else np.random.default_rng(0)
            v = rng.standard_normal(self.tensor.shape[0])
            self.power_vec = v / np.linalg.norm(v)
        else:
            self.power_vec = None

    @property
    def data(self) -> Array:
        return self.tensor.data

    @property
    def grad(self) -> Array | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, t={self.adam_t})"


ParamDict = dict[str, Parameter]


def param_list(params) -> list[Parameter]:
    if isinstance(params, dict):
        return [params[k] for k in sorted(params)]
    return list(params)


def zero_grad(params) -> None:
    for p in param_list(params):
        p.tensor.grad = None


def adam_step(params, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Adam with bias correction; clears gradients afterwards."""
    plist = param_list(params)
    for p in plist:
        if p.tensor.grad is None:
            raise GradientError("adam_step: parameter has no gradient")
    for p in plist:
        g = p.tensor.grad
        p.adam_t += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        mhat = p.adam_m / (1.0 - beta1 ** p.adam_t)
        vhat = p.adam_v / (1.0 - beta2 ** p.adam_t)
        p.tensor.data -= lr * mhat / (np.sqrt(vhat) + eps)
        p.tensor.grad = None


def sgd_step(params, lr: float) -> None:
    """Plain gradient descent (used by the test-time adaptation loop)."""
    plist = param_list(params)
    for p in plist:
        if p.tensor.grad is None:
            raise GradientError("sgd_step: parameter has no gradient")
    for p in plist:
        p.tensor.data -= lr * p.tensor.grad
        p.tensor.grad = None


def grad_norm(params) -> float:
    """Euclidean norm over all parameter gradients (missing grads count as 0)."""
    total = 0.0
    for p in param_list(params):
        if p.tensor.grad is not None:
            total += float(np.sum(p.tensor.grad * p.tensor.grad))
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------

def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def linear_params(rng: np.random.Generator, fan_in: int, fan_out: int,
                  prefix: str, out: ParamDict) -> None:
    """Weight [fan_in, fan_out] + bias [fan_out] under ``prefix``."""
    out[f"{prefix}.w"] = Parameter(glorot(rng, (fan_in, fan_out)), rng=rng)
    out[f"{prefix}.b"] = Parameter(np.zeros(fan_out), rng=rng)


def linear(x: Tensor, params: ParamDict, prefix: str) -> Tensor:
    """x @ W + b for a parameter pair created by ``linear_params``."""
    return add_bias(matmul(x, params[f"{prefix}.w"].tensor),
                    params[f"{prefix}.b"].tensor)
