"""Reverse-mode autodiff tensor kernel backed by float64 numpy arrays.

Every operator is pure: inputs are never written to and each call returns a
fresh ``Tensor``. Calling an operator records the inputs and a backward
closure on the result, so a scalar loss can replay adjoints in reverse
topological order with ``Tensor.backward()``. Only leaves created with
``requires_grad=True`` receive a ``.grad`` array.

The kernel is written for clarity and trust, not throughput: convolutions go
through strided window views plus ``einsum``, and everything stays float64 so
finite-difference checks have headroom.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray

# ---------------------------------------------------------------------------
# instrumentation
# ---------------------------------------------------------------------------

_ACTIVE_COUNTERS: list["MacCounter"] = []

# Name of an operator whose adjoint is deliberately mis-scaled. Used only as
# test instrumentation so the gradient checker can prove it catches a broken
# backward rule. Never set outside tests / the gradcheck CLI.
_CORRUPT_ADJOINT: str | None = None


class MacCounter:
    """Context manager that tallies multiply-accumulates of matmul/conv ops.

    Only the three dense operators (``matmul``, ``conv2d``, ``dwconv2d``)
    contribute; elementwise work, softmax and normalizations are not counted.
    Counts reflect forward passes executed while the counter is active.
    """

    def __init__(self) -> None:
        self.total = 0
        self.by_op: dict[str, int] = {}

    def _add(self, op: str, n: int) -> None:
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n

    def __enter__(self) -> "MacCounter":
        _ACTIVE_COUNTERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_COUNTERS.remove(self)


def _record_macs(op: str, n: int) -> None:
    for counter in _ACTIVE_COUNTERS:
        counter._add(op, n)


def set_adjoint_corruption(op: str | None) -> None:
    """Enable (or clear) deliberate corruption of one operator's adjoint."""
    global _CORRUPT_ADJOINT
    _CORRUPT_ADJOINT = op


# ---------------------------------------------------------------------------
# tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], Sequence[Array | None]] | None = None

    # -- introspection ------------------------------------------------------

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
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        """Copy of the underlying array, safe to mutate."""
        return np.array(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int] | None = None) -> "Tensor":
        return transpose(self, axes)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    # -- autodiff -----------------------------------------------------------

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar.

        Sets ``.grad`` (same shape as the leaf) on every reachable leaf with
        ``requires_grad=True``. Each call starts from fresh gradients; values
        from an earlier backward pass are overwritten, not accumulated.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")

        order = _topo_order(self)
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in order:
            gout = grads.pop(id(node), None)
            if gout is None:
                continue
            if node._backward_fn is None:
                if node.requires_grad:
                    node.grad = gout
                continue
            for parent, g in zip(node._parents, node._backward_fn(gout)):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"adjoint produced gradient of shape {g.shape} for a "
                        f"parent of shape {parent.data.shape}"
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS, returned in reverse (root first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def gradients(loss: Tensor, named_params: Iterable[tuple[str, Tensor]]) -> dict[str, Array]:
    """Backward from ``loss`` and collect a name -> gradient map.

    Parameters that the loss does not reach get an all-zeros gradient of the
    right shape, so the result always covers every requested name.
    """
    loss.backward()
    out: dict[str, Array] = {}
    for name, p in named_params:
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g: Array):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g: Array):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g: Array):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")
    data = a.data.reshape(shape)

    def backward(g: Array):
        return (g.reshape(a.data.shape),)

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes (reversal when ``axes`` is None). Output is a fresh array."""
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation for ndim {a.ndim}")
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    inverse = tuple(np.argsort(axes))

    def backward(g: Array):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis_pos = axis if axis >= 0 else tensors[0].ndim + axis
    data = np.concatenate([t.data for t in tensors], axis=axis_pos)
    sizes = [t.data.shape[axis_pos] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array):
        pieces = []
        for i in range(len(sizes)):
            index = [slice(None)] * g.ndim
            index[axis_pos] = slice(offsets[i], offsets[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(index)]))
        return tuple(pieces)

    return _make(data, tuple(tensors), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> tuple[Tensor, ...]:
    """Split along ``axis`` into chunks of the given sizes."""
    axis_pos = axis if axis >= 0 else a.ndim + axis
    if sum(sizes) != a.data.shape[axis_pos]:
        raise ShapeError(
            f"split sizes {tuple(sizes)} do not cover axis {axis_pos} of shape {a.shape}"
        )
    outs = []
    offset = 0
    for size in sizes:
        index = [slice(None)] * a.ndim
        index[axis_pos] = slice(offset, offset + size)
        piece = np.ascontiguousarray(a.data[tuple(index)])
        lo = offset

        def backward(g: Array, lo=lo, size=size):
            full = np.zeros_like(a.data)
            index = [slice(None)] * a.ndim
            index[axis_pos] = slice(lo, lo + size)
            full[tuple(index)] = g
            return (full,)

        outs.append(_make(piece, (a,), backward))
        offset += size
    return tuple(outs)


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def backward(g: Array):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(data, (a,), backward)


def tensor_mean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean())

    def backward(g: Array):
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# dense ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-d, or batched with identical leading dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.ndim != b.ndim:
        raise ShapeError(f"matmul rank mismatch: {a.shape} @ {b.shape}")
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    data = np.matmul(a.data, b.data)
    batch = math.prod(a.data.shape[:-2])
    _record_macs("matmul", batch * a.data.shape[-2] * a.data.shape[-1] * b.data.shape[-1])

    def backward(g: Array):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (ga, gb)

    return _make(data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: ``y = x @ weight (+ bias)``.

    ``x`` may have any leading shape; ``weight`` is ``(d_in, d_out)``.
    Composite of the primitive ops, so it needs no adjoint of its own.
    """
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {weight.shape}")
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ShapeError(f"linear input {x.shape} does not match weight {weight.shape}")
    lead = x.data.shape[:-1]
    flat = reshape(x, (math.prod(lead), x.data.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    if x.ndim != 2:
        out = reshape(out, lead + (weight.data.shape[1],))
    return out


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _conv_windows(padded: Array, kh: int, kw: int, stride: int) -> Array:
    n, c, hp, wp = padded.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = padded.strides
    shape = (n, c, ho, wo, kh, kw)
    strides = (sn, sc, sh * stride, sw * stride, sh, sw)
    return np.lib.stride_tricks.as_strided(padded, shape, strides, writeable=False)


def _check_conv_args(x: Tensor, w: Tensor, stride: int, padding: int) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv expects 4-d input and weight, got {x.shape}, {w.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"bad stride/padding: stride={stride} padding={padding}")
    kh, kw = w.data.shape[2], w.data.shape[3]
    if x.data.shape[2] + 2 * padding < kh or x.data.shape[3] + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{x.data.shape[2] + 2 * padding}x{x.data.shape[3] + 2 * padding}"
        )


def _scatter_into_padded(
    g_padded: Array, g_out: Array, contrib, kh: int, kw: int, stride: int
) -> None:
    ho, wo = g_out.shape[2], g_out.shape[3]
    for i in range(kh):
        for j in range(kw):
            g_padded[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += contrib(
                i, j
            )


def _unpad(g_padded: Array, padding: int) -> Array:
    if padding == 0:
        return g_padded
    return np.ascontiguousarray(g_padded[:, :, padding:-padding, padding:-padding])


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation. ``x (N,C,H,W)``, ``weight (O,C,kh,kw)``.

    Output spatial size follows floor((H + 2p - kh)/stride) + 1. Bias is not
    part of the primitive; add a broadcast bias tensor on top.
    """
    _check_conv_args(x, weight, stride, padding)
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}"
        )
    kh, kw = weight.data.shape[2], weight.data.shape[3]
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = _conv_windows(padded, kh, kw, stride)
    data = np.einsum("nchwkl,ockl->nohw", windows, weight.data, optimize=True)
    n, o, ho, wo = data.shape
    _record_macs("conv2d", n * o * x.data.shape[1] * kh * kw * ho * wo)

    def backward(g: Array):
        gw = np.einsum("nchwkl,nohw->ockl", windows, g, optimize=True)
        gp = np.zeros_like(padded)
        _scatter_into_padded(
            gp,
            g,
            lambda i, j: np.einsum("nohw,oc->nchw", g, weight.data[:, :, i, j], optimize=True),
            kh,
            kw,
            stride,
        )
        return (_unpad(gp, padding), gw)

    return _make(data, (x, weight), backward)


def dwconv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Depthwise 2-d cross-correlation. ``weight (C,1,kh,kw)``, one filter per channel."""
    _check_conv_args(x, weight, stride, padding)
    if weight.data.shape[1] != 1 or weight.data.shape[0] != x.data.shape[1]:
        raise ShapeError(
            f"dwconv2d weight must be (C,1,kh,kw) with C={x.data.shape[1]}, got {weight.shape}"
        )
    kh, kw = weight.data.shape[2], weight.data.shape[3]
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = _conv_windows(padded, kh, kw, stride)
    data = np.einsum("nchwkl,ckl->nchw", windows, weight.data[:, 0], optimize=True)
    n, c, ho, wo = data.shape
    _record_macs("dwconv2d", n * c * kh * kw * ho * wo)

    def backward(g: Array):
        gw = np.einsum("nchwkl,nchw->ckl", windows, g, optimize=True)[:, None]
        gp = np.zeros_like(padded)
        _scatter_into_padded(
            gp,
            g,
            lambda i, j: g * weight.data[None, :, 0, i, j, None, None],
            kh,
            kw,
            stride,
        )
        return (_unpad(gp, padding), gw)

    return _make(data, (x, weight), backward)


# ---------------------------------------------------------------------------
# nonlinearities and reductions
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh form."""
    inner = _GELU_C * (x.data + 0.044715 * x.data**3)
    tanh = np.tanh(inner)
    data = 0.5 * x.data * (1.0 + tanh)

    def backward(g: Array):
        sech2 = 1.0 - tanh**2
        local = 0.5 * (1.0 + tanh) + 0.5 * x.data * sech2 * _GELU_C * (
            1.0 + 3 * 0.044715 * x.data**2
        )
        if _CORRUPT_ADJOINT == "gelu":
            local = local * 1.5
        return (g * local,)

    return _make(data, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layernorm scale/shift must have shape ({d},), got {gamma.shape}, {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data

    def backward(g: Array):
        gxhat = g * gamma.data
        mean_g = gxhat.mean(axis=-1, keepdims=True)
        mean_gx = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gxhat - mean_g - xhat * mean_gx)
        axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        return (gx, ggamma, gbeta)

    return _make(data, (x, gamma, beta), backward)


def avgpool_global(x: Tensor) -> Tensor:
    """Mean over the spatial grid: ``(N,C,H,W) -> (N,C)``."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool_global expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def backward(g: Array):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy(),)

    return _make(data, (x,), backward)


def cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits (N,K)``."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N,K) logits, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits {logits.shape}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError(f"labels must be integers, got dtype {labels.dtype}")
    n, k = logits.data.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    data = np.asarray(-log_probs[np.arange(n), labels].mean())

    def backward(g: Array):
        p = np.exp(log_probs)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n, )

    return _make(data, (logits,), backward)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def finite_difference(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    indices: Sequence[tuple[int, ...]],
    h: float = 1e-3,
) -> dict[tuple[int, ...], float]:
    """Central-difference estimates of d(loss)/d(param[idx]) for chosen entries.

    ``loss_fn`` must rebuild the loss from scratch on every call (it reads the
    current contents of ``param``). The parameter is perturbed in place and
    restored exactly.
    """
    out: dict[tuple[int, ...], float] = {}
    for idx in indices:
        original = param.data[idx]
        param.data[idx] = original + h
        up = loss_fn().item()
        param.data[idx] = original - h
        down = loss_fn().item()
        param.data[idx] = original
        out[idx] = (up - down) / (2.0 * h)
    return out


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """|a - b| scaled by the larger magnitude, floored to avoid 0/0."""
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom
