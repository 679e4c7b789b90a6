"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it as a closure that
maps the output gradient to gradients of its parents.  :meth:`Tensor.backward`
walks the graph once in reverse topological order.  Gradients of leaves
are written to ``.grad``; calling ``backward`` a second time on the same
graph, or into leaves that still hold a gradient from an earlier pass,
raises ``RuntimeError`` until the gradients are reset.
"""

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_fresh", "_used", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._fresh = True
        self._used = False
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s%s)" % (
            self.shape, self.dtype, ", requires_grad" if self.requires_grad else "")

    def __len__(self):
        return self.shape[0]

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)
        self._fresh = True

    def detach(self):
        return Tensor(self.data)

    # -- graph traversal ---------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward needs a scalar loss, got shape %s" % (self.shape,))
        if self._used:
            raise RuntimeError("backward already ran on this graph; rebuild it")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        leaves = []
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    leaves.append((node, g))
                continue
            if g is None:
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for leaf, g in leaves:
            if leaf.grad is not None and not leaf._fresh:
                raise RuntimeError(
                    "gradient of %s already populated; reset gradients before another backward"
                    % (leaf.name or "tensor"))
        for leaf, g in leaves:
            g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            leaf._fresh = False
        for node in order:
            node._used = True
            if node._backward is not None:
                node._backward = None
                node._parents = ()

    # -- operators ---------------------------------------------------------
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

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

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


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    if dtype is None and isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError("%s: incompatible shapes %s and %s" % (op, a.shape, b.shape)) from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast("multiply", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * ad, b.shape) if b.requires_grad else None))


multiply = mul


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / bd, b.shape) if b.requires_grad else None))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def maximum(a, floor):
    """``max(a, floor)`` for a constant ``floor``; gradient passes where ``a > floor``."""
    ad = a.data
    keep = ad > floor
    return _make(np.where(keep, ad, floor).astype(ad.dtype), (a,), lambda g: (g * keep,))


# -- reductions and shape ops ---------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / float(n))


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx):
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g) if _advanced(idx) else full.__setitem__(idx, g)
        return (full,)

    return _make(a.data[idx], (a,), back)


def _advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


slice_ = getitem


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != axis % ref.ndim):
            raise ValueError("concat: incompatible shapes %s and %s on axis %d" % (ref.shape, t.shape, axis))
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def expand_dims(a, axis):
    return reshape(a, np.expand_dims(a.data, axis).shape)


def pad(a, widths):
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


# -- linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError("matmul: incompatible shapes %s and %s" % (a.shape, b.shape))
    ad, bd = a.data, b.data

    def back(g):
        ga = gb = None
        g = np.ascontiguousarray(g)
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape) if ad.ndim > 1 else g @ bd.T
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            elif bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), back)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` shaped ``(in, out)``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- nonlinearities ---------------------------------------------------------------

def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    ad = a.data
    out = np.logaddexp(0.0, ad).astype(ad.dtype)
    return _make(out, (a,), lambda g: (g * _sigmoid(ad),))


def leaky_relu(a, slope=0.01):
    ad = a.data
    scale = np.where(ad > 0, 1.0, slope).astype(ad.dtype)
    return _make(ad * scale, (a,), lambda g: (g * scale,))


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def complex_abs(re, im):
    """Modulus of a complex array held as real and imaginary parts."""
    r, i = re.data, im.data
    mag = np.sqrt(r * r + i * i)
    safe = np.where(mag > 0, mag, 1.0)

    def back(g):
        gs = np.where(mag > 0, g / safe, 0.0)
        return gs * r, gs * i

    return _make(mag, (re, im), back)
