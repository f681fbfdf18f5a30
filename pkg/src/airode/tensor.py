"""Dense complex tensors with reverse-mode automatic differentiation.

Everything the network touches (images, feature vectors, weights, received
signals) is a `ComplexTensor`: a numpy complex128 array plus an optional
gradient and a record of how it was produced. Differentiation treats each
complex entry as the pair of real parameters (re, im); the gradient of a
real-valued scalar loss is stored as the complex array

    grad = dL/dRe + 1j * dL/dIm

Under this convention every holomorphic primitive (add, mul, matmul, conv)
has the adjoint rule ``g_in = g_out * conj(local_derivative)``; the
non-holomorphic ones (conj, abs, crelu, ...) carry hand-derived rules.

Storage is row-major and dense. There is no broadcasting beyond
scalar-with-tensor; binary elementwise ops require identical shapes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ComplexTensor",
    "Tape",
    "tensor",
    "zeros",
    "backward",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "mul",
    "smul",
    "sadd",
    "neg",
    "conj",
    "cabs",
    "real",
    "imag",
    "crelu",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose",
    "concat",
    "pad",
    "crop",
    "matmul",
]


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording (for evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled():
    return _GRAD_ENABLED


class ComplexTensor:
    """A dense complex array, optionally tracked for backpropagation.

    Leaf tensors are created from data (`tensor(...)`, `zeros(...)`);
    non-leaf tensors come out of the ops in this module and remember their
    parents and a local adjoint rule. Data is never mutated by an op;
    the optimizer rebinds `.data` on parameter leaves between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.complex128)
        if arr.size and not (
            np.all(np.isfinite(arr.real)) and np.all(np.isfinite(arr.imag))
        ):
            raise ValueError("tensor data must be finite (no NaN/Inf)")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backprop = None

    # -- construction used by ops (skips the finite check and the copy) --
    @staticmethod
    def _from_op(data, parents, backprop):
        t = ComplexTensor.__new__(ComplexTensor)
        t.data = data
        t.grad = None
        t.requires_grad = any(p.requires_grad for p in parents)
        if _GRAD_ENABLED and t.requires_grad:
            t._parents = tuple(parents)
            t._backprop = backprop
        else:
            t._parents = ()
            t._backprop = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A new leaf sharing this tensor's values, cut from the graph."""
        t = ComplexTensor.__new__(ComplexTensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backprop = None
        return t

    def item(self):
        return complex(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"ComplexTensor(shape={self.shape}{flag})"

    # Arithmetic sugar; the named functions below are the primary API.
    def __add__(self, other):
        return add(self, other) if isinstance(other, ComplexTensor) else sadd(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, ComplexTensor) else sadd(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, ComplexTensor) else smul(self, other)

    def __rmul__(self, scalar):
        return smul(self, scalar)

    def __neg__(self):
        return neg(self)


def tensor(data, requires_grad=False):
    return ComplexTensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    t = ComplexTensor.__new__(ComplexTensor)
    t.data = np.zeros(shape, dtype=np.complex128)
    t.grad = None
    t.requires_grad = bool(requires_grad)
    t._parents = ()
    t._backprop = None
    return t


def zeros_like(t, requires_grad=False):
    return zeros(t.shape, requires_grad=requires_grad)


class Tape:
    """Topologically ordered record of the ops reaching one output tensor.

    Built by iterative depth-first traversal of the parent links, so every
    operation's inputs precede it and the order (hence gradient
    accumulation order) is identical on every run over the same graph.
    """

    def __init__(self, root):
        order = []
        seen = set()
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
            for p in reversed(node._parents):
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Backpropagate from a real scalar loss, populating `.grad` on leaves.

    Gradients of every tensor on the tape are reset first, so calling
    twice on the same graph gives bit-identical results.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    value = complex(loss.data)
    if abs(value.imag) > 1e-12 * max(1.0, abs(value.real)):
        raise ValueError(f"backward needs a real loss, got imaginary part {value.imag}")
    tape = Tape(loss)
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones((), dtype=np.complex128)
    for node in reversed(tape.nodes):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)
    return tape


def _accum(t, g):
    if t.grad is None:
        t.grad = g.astype(np.complex128, copy=True)
    else:
        t.grad = t.grad + g


def _require_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    _require_same_shape(a, b, "add")

    def backprop(g):
        _accum(a, g)
        _accum(b, g)

    return ComplexTensor._from_op(a.data + b.data, (a, b), backprop)


def sub(a, b):
    _require_same_shape(a, b, "sub")

    def backprop(g):
        _accum(a, g)
        _accum(b, -g)

    return ComplexTensor._from_op(a.data - b.data, (a, b), backprop)


def mul(a, b):
    """Elementwise complex product."""
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backprop(g):
        _accum(a, g * np.conj(bd))
        _accum(b, g * np.conj(ad))

    return ComplexTensor._from_op(ad * bd, (a, b), backprop)


def smul(a, scalar):
    """Tensor times a python/numpy scalar (the one allowed broadcast)."""
    s = complex(scalar)

    def backprop(g):
        _accum(a, g * np.conj(s))

    return ComplexTensor._from_op(a.data * s, (a,), backprop)


def sadd(a, scalar):
    s = complex(scalar)

    def backprop(g):
        _accum(a, g)

    return ComplexTensor._from_op(a.data + s, (a,), backprop)


def neg(a):
    def backprop(g):
        _accum(a, -g)

    return ComplexTensor._from_op(-a.data, (a,), backprop)


def conj(a):
    def backprop(g):
        _accum(a, np.conj(g))

    return ComplexTensor._from_op(np.conj(a.data), (a,), backprop)


def cabs(a):
    """Modulus |z|, returned as a real-valued tensor (imaginary part 0).

    Subgradient at z == 0 is 0.
    """
    ad = a.data
    mag = np.abs(ad)

    def backprop(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(mag > 0.0, ad / np.where(mag > 0.0, mag, 1.0), 0.0)
        _accum(a, g.real * unit)

    return ComplexTensor._from_op(mag.astype(np.complex128), (a,), backprop)


def real(a):
    def backprop(g):
        _accum(a, g.real.astype(np.complex128))

    return ComplexTensor._from_op(a.data.real.astype(np.complex128), (a,), backprop)


def imag(a):
    def backprop(g):
        _accum(a, 1j * g.real)

    return ComplexTensor._from_op(a.data.imag.astype(np.complex128), (a,), backprop)


def crelu(a):
    """ReLU applied to the real and imaginary parts independently."""
    ad = a.data
    mask_re = ad.real > 0.0
    mask_im = ad.imag > 0.0
    out = ad.real * mask_re + 1j * (ad.imag * mask_im)

    def backprop(g):
        _accum(a, g.real * mask_re + 1j * (g.imag * mask_im))

    return ComplexTensor._from_op(out, (a,), backprop)


def sum_all(a):
    """Sum over all entries, returning a scalar tensor (shape ())."""
    shape = a.data.shape

    def backprop(g):
        _accum(a, np.broadcast_to(g, shape))

    return ComplexTensor._from_op(a.data.sum(), (a,), backprop)


def mean_all(a):
    n = a.data.size
    shape = a.data.shape

    def backprop(g):
        _accum(a, np.broadcast_to(g / n, shape))

    return ComplexTensor._from_op(a.data.mean(), (a,), backprop)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    old = a.data.shape
    if int(np.prod(shape)) != a.data.size:
        raise ValueError(f"reshape: cannot view {old} as {tuple(shape)}")

    def backprop(g):
        _accum(a, g.reshape(old))

    return ComplexTensor._from_op(a.data.reshape(shape), (a,), backprop)


def transpose(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ValueError(f"transpose: invalid axes {axes} for ndim {a.data.ndim}")
    inverse = tuple(np.argsort(axes))

    def backprop(g):
        _accum(a, g.transpose(inverse))

    return ComplexTensor._from_op(a.data.transpose(axes), (a,), backprop)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ValueError(
                f"concat: rank mismatch {tensors[0].data.shape} vs {t.data.shape}"
            )
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backprop(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return ComplexTensor._from_op(data, tuple(tensors), backprop)


def pad(a, pad_width):
    """Zero-pad; `pad_width` is a per-axis list of (before, after) counts.

    The inserted entries are exact complex zeros and receive no gradient.
    """
    pad_width = [tuple(int(x) for x in pw) for pw in pad_width]
    if len(pad_width) != a.data.ndim:
        raise ValueError(
            f"pad: got {len(pad_width)} axis specs for ndim {a.data.ndim}"
        )
    if any(p < 0 for pw in pad_width for p in pw):
        raise ValueError(f"pad: negative pad width in {pad_width}")
    inner = tuple(
        slice(before, before + n) for (before, _), n in zip(pad_width, a.data.shape)
    )

    def backprop(g):
        _accum(a, g[inner])

    data = np.pad(a.data, pad_width, mode="constant")
    return ComplexTensor._from_op(data, (a,), backprop)


def crop(a, slices):
    """Take a rectangular sub-block; the adjoint scatters back into zeros."""
    slices = tuple(slices)
    if len(slices) != a.data.ndim:
        raise ValueError(f"crop: got {len(slices)} slices for ndim {a.data.ndim}")
    shape = a.data.shape

    def backprop(g):
        full = np.zeros(shape, dtype=np.complex128)
        full[slices] = g
        _accum(a, full)

    return ComplexTensor._from_op(a.data[slices], (a,), backprop)


def matmul(a, b):
    """Complex matrix product (2-D x 2-D)."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {ad.shape} x {bd.shape}")

    def backprop(g):
        _accum(a, g @ np.conj(bd.T))
        _accum(b, np.conj(ad.T) @ g)

    return ComplexTensor._from_op(ad @ bd, (a, b), backprop)
