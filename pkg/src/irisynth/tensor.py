"""Dense-tensor engine with reverse-mode autodiff and the Adam optimizer.

Row-major N-dimensional arrays (numpy-backed) with a dynamically recorded
operation tape. Covers exactly what the adversarial nets and the PAD
classifier need: elementwise arithmetic, dense/conv/transposed-conv layers,
batch normalization, the usual activations, and reductions. No implicit
broadcasting beyond bias-add over channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "conv2d",
    "conv_transpose2d",
    "batchnorm2d",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "dense",
    "concat_channels",
    "AdamState",
    "adam_step",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """N-dimensional array with optional gradient and an autodiff tape link.

    Results of recorded operations keep references to their parents and a
    closure that scatters the incoming gradient back to them; `backward` on
    a scalar walks the tape once in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = any(p.requires_grad for p in parents)
        t._parents = tuple(parents) if t.requires_grad else ()
        t._backward = backward if t.requires_grad else None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad = self.grad + g

    # -- tape walk ---------------------------------------------------------

    def backward(self):
        """Populate `grad` on every requires_grad tensor reachable from here.

        Only valid on scalar (single-element) tensors. Repeated calls
        without zeroing accumulate gradients.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = np.array(pg, dtype=parent.data.dtype)

    # -- elementwise arithmetic -------------------------------------------

    @staticmethod
    def _coerce(other):
        if isinstance(other, Tensor):
            return other
        if np.isscalar(other):
            return None  # handled as scalar constant
        raise TypeError(f"cannot combine Tensor with {type(other)!r}")

    def _check_same_shape(self, other):
        if self.data.shape != other.data.shape:
            raise ShapeError(
                f"elementwise op shape mismatch: {self.data.shape} vs {other.data.shape}"
            )

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            out = self.data + other
            return Tensor._from_op(out, (self,), lambda g: [(self, g)])
        self._check_same_shape(o)
        out = self.data + o.data
        return Tensor._from_op(out, (self, o), lambda g: [(self, g), (o, g)])

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: [(self, -g)])

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return self + (-other)
        return self + (-o)

    def __rsub__(self, other):
        # scalar - tensor
        out = other - self.data
        return Tensor._from_op(out, (self,), lambda g: [(self, -g)])

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            out = self.data * other
            return Tensor._from_op(out, (self,), lambda g: [(self, g * other)])
        self._check_same_shape(o)
        out = self.data * o.data
        return Tensor._from_op(
            out, (self, o), lambda g: [(self, g * o.data), (o, g * self.data)]
        )

    __rmul__ = __mul__

    def log(self):
        out = np.log(self.data)
        return Tensor._from_op(out, (self,), lambda g: [(self, g / self.data)])

    def clamp(self, lo, hi):
        out = np.clip(self.data, lo, hi)
        inside = ((self.data > lo) & (self.data < hi)).astype(self.data.dtype)
        return Tensor._from_op(out, (self,), lambda g: [(self, g * inside)])

    def sum(self):
        out = np.asarray(self.data.sum(), dtype=self.data.dtype)
        return Tensor._from_op(
            out, (self,), lambda g: [(self, np.broadcast_to(g, self.data.shape))]
        )

    def mean(self):
        n = self.data.size
        out = np.asarray(self.data.mean(), dtype=self.data.dtype)
        return Tensor._from_op(
            out, (self,), lambda g: [(self, np.broadcast_to(g / n, self.data.shape))]
        )

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        out = self.data.reshape(shape)
        return Tensor._from_op(out, (self,), lambda g: [(self, g.reshape(src))])


# -- activations -----------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    # subgradient 0 at the kink (negative-side slope)
    mask = (x.data > 0).astype(x.data.dtype)
    return Tensor._from_op(x.data * mask, (x,), lambda g: [(x, g * mask)])


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    # slope taken on x <= 0, matching the relu kink convention
    factor = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return Tensor._from_op(x.data * factor, (x,), lambda g: [(x, g * factor)])


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: [(x, g * (1.0 - out * out))])


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._from_op(out, (x,), lambda g: [(x, g * out * (1.0 - out))])


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N, F) @ (F, M) + (M,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"dense shape mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(
            f"dense bias shape {b.data.shape} does not match weight {w.data.shape}"
        )
    out = x.data @ w.data + b.data

    def backward(g):
        return [(x, g @ w.data.T), (w, x.data.T @ g), (b, g.sum(axis=0))]

    return Tensor._from_op(out, (x, w, b), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    if a.data.shape[0::2] != b.data.shape[0::2] or a.data.ndim != 4:
        raise ShapeError(
            f"channel concat shape mismatch: {a.data.shape} vs {b.data.shape}"
        )
    ca = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return [(a, g[:, :ca]), (b, g[:, ca:])]

    return Tensor._from_op(out, (a, b), backward)


# -- convolution kernels (plain-array helpers) -----------------------------


def _conv_fwd(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, ci, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    acc = np.zeros((n, ho, wo, o), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            xs = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            acc += np.tensordot(xs, w[:, :, ki, kj], axes=([1], [1]))
    return acc.transpose(0, 3, 1, 2)


def _conv_grad_input(g, w, stride, pad, in_shape):
    n, c, h, wd = in_shape
    o, ci, k, _ = w.shape
    ho, wo = g.shape[2], g.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
    for ki in range(k):
        for kj in range(k):
            t = np.tensordot(g, w[:, :, ki, kj], axes=([1], [0]))  # n,ho,wo,c
            dxp[
                :, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride
            ] += t.transpose(0, 3, 1, 2)
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + wd]
    return dxp


def _conv_grad_weight(x, g, stride, pad, wshape):
    o, c, k, _ = wshape
    ho, wo = g.shape[2], g.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dw = np.zeros(wshape, dtype=g.dtype)
    for ki in range(k):
        for kj in range(k):
            xs = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            dw[:, :, ki, kj] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
    return dw


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution. x: NCHW, w: (out, in, K, K), b: (out,)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects NCHW input and OIKK weight, got {x.data.shape} and {w.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    k = w.data.shape[2]
    if x.data.shape[2] + 2 * padding < k or x.data.shape[3] + 2 * padding < k:
        raise ShapeError(
            f"kernel {w.data.shape} does not fit padded input {x.data.shape} (pad={padding})"
        )
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"conv2d bias shape {b.data.shape} vs weight {w.data.shape}")
    out = _conv_fwd(x.data, w.data, stride, padding)
    out += b.data[None, :, None, None]

    def backward(g):
        return [
            (x, _conv_grad_input(g, w.data, stride, padding, x.data.shape)),
            (w, _conv_grad_weight(x.data, g, stride, padding, w.data.shape)),
            (b, g.sum(axis=(0, 2, 3))),
        ]

    return Tensor._from_op(out, (x, w, b), backward)


def conv_transpose2d(
    x: Tensor,
    w: Tensor,
    b: Tensor,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed 2-D convolution. x: NCHW, w: (in, out, K, K), b: (out,)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d expects NCHW input and IOKK weight, got {x.data.shape} and {w.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"conv_transpose2d channel mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    if output_padding >= stride:
        raise ValueError(
            f"output_padding ({output_padding}) must be < stride ({stride})"
        )
    n, ci, h, wd = x.data.shape
    _, co, k, _ = w.data.shape
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (wd - 1) * stride - 2 * padding + k + output_padding
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv_transpose2d output would be empty for input {x.data.shape}"
        )
    if b.data.shape != (co,):
        raise ShapeError(
            f"conv_transpose2d bias shape {b.data.shape} vs weight {w.data.shape}"
        )
    out = _conv_grad_input(x.data, w.data, stride, padding, (n, co, ho, wo))
    out = out + b.data[None, :, None, None]

    def backward(g):
        return [
            (x, _conv_fwd(g, w.data, stride, padding)),
            (w, _conv_grad_weight(g, x.data, stride, padding, w.data.shape)),
            (b, g.sum(axis=(0, 2, 3))),
        ]

    return Tensor._from_op(out, (x, w, b), backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over an NCHW batch.

    In training mode the batch statistics are used and the running stats are
    updated in place by exponential moving average. Eval mode normalizes with
    the running stats. Training on a batch of one is rejected (the variance
    this normalization needs is undefined there).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batchnorm2d affine params {gamma.data.shape}/{beta.data.shape} vs {c} channels"
        )
    if training:
        if x.data.shape[0] < 2:
            raise ValueError("batchnorm2d training mode needs batch size >= 2")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        gx = g * gamma.data[None, :, None, None]
        if training:
            m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            mean_gx = gx.mean(axis=(0, 2, 3))
            mean_gx_xhat = (gx * xhat).mean(axis=(0, 2, 3))
            dx = (
                gx
                - mean_gx[None, :, None, None]
                - xhat * mean_gx_xhat[None, :, None, None]
            ) * inv_std[None, :, None, None]
        else:
            dx = gx * inv_std[None, :, None, None]
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return Tensor._from_op(out, (x, gamma, beta), backward)


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam accumulators keyed by parameter name."""

    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place to every named parameter.

    Parameters with no gradient (grad is None) are treated as zero-gradient
    and left unchanged. A non-finite gradient aborts, naming the parameter.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        elif state.m[name].shape != p.data.shape:
            raise ShapeError(
                f"Adam state for {name!r} has shape {state.m[name].shape}, "
                f"parameter has {p.data.shape}"
            )
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = state.m[name] / (1 - b1**t)
        vhat = state.v[name] / (1 - b2**t)
        p.data -= state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)
