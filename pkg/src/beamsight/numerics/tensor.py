"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  The record is built
fresh on every forward pass and torn down by :meth:`Tensor.backward`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, FD probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff --------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable ``requires_grad`` tensor.

        The root must be a scalar.  The recorded graph is released afterwards,
        so a second call on the same root raises.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("computation record already consumed; run the forward pass again")
        if not self.requires_grad:
            raise RuntimeError("root does not require grad")

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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward = None
            node._parents = ()
        self._consumed = True

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("division only supported by python scalars")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=DTYPE), like.shape).copy())


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = tuple(parents)
                out._backward = backward
                break
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _bias_axes(a_shape, b_shape) -> tuple[int, ...] | None:
    """Leading axes to sum over when ``b`` is a trailing-suffix bias of ``a``."""
    if a_shape == b_shape:
        return ()
    nb = len(b_shape)
    if nb < len(a_shape) and tuple(a_shape[len(a_shape) - nb:]) == tuple(b_shape):
        return tuple(range(len(a_shape) - nb))
    return None


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum.  ``b`` may also be a bias matching a trailing suffix of ``a``."""
    axes = _bias_axes(a.shape, b.shape)
    if axes is None:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g, (g.sum(axis=axes) if axes else g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    axes = _bias_axes(a.shape, b.shape)
    if axes is None:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g, -(g.sum(axis=axes) if axes else g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors (or trailing-suffix ``b``)."""
    axes = _bias_axes(a.shape, b.shape)
    if axes is None:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = g * bd if need_a else None
        if not need_b:
            return ga, None
        gb = g * ad
        return ga, (gb.sum(axis=axes) if axes else gb)

    return _make(ad * bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        # d/dx = 0.5(1+t) + 0.5 x (1-t^2) c (1 + 3*0.044715 x^2)
        d = x2 * (3 * 0.044715 * _GELU_C)
        d += _GELU_C
        d *= x
        sech2 = t * t
        np.subtract(1.0, sech2, out=sech2)
        d *= sech2
        d += t
        d += 1.0
        d *= 0.5
        d *= g
        return (d,)

    return _make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * x * g,))


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of singleton axes; the backward pass sums them back."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ValueError("expand keeps rank; reshape first")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    for i in axes:
        if a.shape[i] != 1:
            raise ValueError(f"expand: axis {i} has size {a.shape[i]}, not 1")
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (g.sum(axis=axes, keepdims=True),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tuple(tensors), backward)


def index_select(a: Tensor, index) -> Tensor:
    """Basic/advanced numpy indexing with scatter-add backward."""
    src_shape = a.shape

    def backward(g):
        full = np.zeros(src_shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-batch row gather: ``out[n, t] = a[n, idx[n, t]]`` for ``a`` of shape (N, T, C)."""
    n = a.shape[0]
    rows = np.arange(n)[:, None]
    out = a.data[rows, idx]
    src_shape = a.shape

    def backward(g):
        full = np.zeros(src_shape, dtype=DTYPE)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return _make(out, (a,), backward)


def pad(a: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` as in :func:`numpy.pad`."""
    widths = tuple(tuple(w) for w in widths)
    sl = tuple(slice(lo, lo + s) for (lo, _), s in zip(widths, a.shape))
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, src).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum_(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a plain 2-D weight (shared over ``a``'s leading axes) or
    has exactly the same leading axes as ``a``.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul needs at least 2-D operands")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ ({ad.shape} @ {bd.shape})")
    need_a, need_b = a.requires_grad, b.requires_grad
    if bd.ndim == 2:
        out = ad @ bd

        def backward(g):
            ga = g @ bd.T if need_a else None
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if need_b else None
            return ga, gb
    else:
        if ad.shape[:-2] != bd.shape[:-2]:
            raise ValueError(f"matmul: batch dimensions differ ({ad.shape} @ {bd.shape})")
        out = ad @ bd

        def backward(g):
            return (g @ np.swapaxes(bd, -1, -2) if need_a else None,
                    np.swapaxes(ad, -1, -2) @ g if need_b else None)

    return _make(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# ---------------------------------------------------------------------------
# fused kernels
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted)."""
    xd = x.data
    mx = xd.max(axis=axis, keepdims=True)
    if np.isnan(mx).any():  # max propagates NaN, so this sees every NaN input
        raise FloatingPointError("softmax received NaN input")
    y = xd - mx
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if np.isnan(xd).any():
        raise FloatingPointError("log_softmax received NaN input")
    z = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then apply per-feature gain and bias."""
    xd = x.data
    n = xd.shape[-1]
    if n < 2:
        raise ValueError("layer_norm needs a normalized axis of length >= 2")
    # np.add.reduce / n is what ndarray.mean computes, minus its python wrapper
    mu = np.add.reduce(xd, axis=-1, keepdims=True) / n
    xc = xd - mu
    var = np.add.reduce(xc * xc, axis=-1, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    out = xhat * gd if gd is not None else xhat.copy()
    if bias is not None:
        out = out + bias.data
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        gx_hat = g * gd if gd is not None else g
        gx = inv * (gx_hat - np.add.reduce(gx_hat, axis=-1, keepdims=True) / n
                    - xhat * (np.add.reduce(gx_hat * xhat, axis=-1, keepdims=True) / n))
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    parents = [x] + [t for t in (gain, bias) if t is not None]
    return _make(out, parents, backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    ld = logits.data
    if ld.ndim != 2:
        raise ValueError("cross_entropy expects logits of shape (N, K)")
    n, k = ld.shape
    if labels.shape != (n,):
        raise ValueError("labels must have shape (N,)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label out of range [0, {k})")
    if np.isnan(ld).any():
        raise FloatingPointError("cross_entropy received NaN logits")
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    return _make(np.asarray(loss), (logits,), backward)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
           groups: int = 1) -> Tensor:
    """2-D cross-correlation on ``(N, C, H, W)`` (or unbatched ``(C, H, W)``) input.

    ``weight`` has shape ``(C_out, C_in // groups, kh, kw)``; ``groups == C_in``
    gives a depthwise convolution.
    """
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups or cg != c // groups:
        raise ValueError(f"conv2d: channel/group mismatch (C={c}, weight={weight.shape}, groups={groups})")
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError("conv2d: kernel larger than padded input")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    og = o // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    xg = xp.reshape(n, groups, cg, hp, wp)
    wd = weight.data.reshape(groups, og, cg, kh, kw)
    out = np.zeros((n, groups, og, ho, wo), dtype=DTYPE)
    depthwise = cg == 1 and og == 1

    def window(arr, i, j):
        return arr[..., i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]

    dense = groups == 1
    if dense:  # one contraction over stacked windows: cols is (n, c, kh, kw, ho, wo)
        cols = np.stack([np.stack([window(xp, i, j) for j in range(kw)], axis=2) for i in range(kh)], axis=2)
        out = np.tensordot(cols, weight.data, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        for i in range(kh):
            for j in range(kw):
                patch = window(xg, i, j)  # (n, G, cg, ho, wo)
                if depthwise:
                    out += patch * wd[:, :, :, i, j].reshape(1, groups, 1, 1, 1)
                else:
                    out += np.einsum("ngcyx,goc->ngoyx", patch, wd[:, :, :, i, j], optimize=True)
    out = np.ascontiguousarray(out.reshape(n, o, ho, wo))
    if bias is not None:
        out += bias.data[None, :, None, None]

    need_x = x.requires_grad

    def backward(g):
        gg = g.reshape(n, groups, og, ho, wo)
        gxp = np.zeros((n, groups, cg, hp, wp), dtype=DTYPE)
        if dense:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))  # (o, c, kh, kw)
            if need_x:
                gcols = np.tensordot(g, weight.data, axes=([1], [0]))  # (n, ho, wo, c, kh, kw)
                gxd = gxp.reshape(n, c, hp, wp)
                for i in range(kh):
                    for j in range(kw):
                        window(gxd, i, j)[...] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        else:
            gw = np.zeros_like(wd)
        for i in range(kh if not dense else 0):
            for j in range(kw):
                patch = window(xg, i, j)
                tgt = window(gxp, i, j)
                if depthwise:
                    gw[:, :, :, i, j] = (gg * patch).sum(axis=(0, 3, 4)).reshape(groups, 1, 1)
                    tgt += gg * wd[:, :, :, i, j].reshape(1, groups, 1, 1, 1)
                else:
                    gw[:, :, :, i, j] = np.einsum("ngoyx,ngcyx->goc", gg, patch, optimize=True)
                    tgt += np.einsum("ngoyx,goc->ngcyx", gg, wd[:, :, :, i, j], optimize=True)
        gx = gxp.reshape(n, c, hp, wp)[:, :, ph:ph + h, pw:pw + w] if need_x else None
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = [x, weight] + ([bias] if bias is not None else [])
    res = _make(out, parents, backward)
    if unbatched:
        res = reshape(res, res.shape[1:])
    return res


def parameters_require_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.requires_grad = True
