"""Dense tensors with a reverse-mode tape.

A :class:`Tensor` wraps a numpy array laid out channel-last (``H x W x C``,
optionally with leading batch axes).  Operations in :mod:`houghtrack.ops`
build output tensors through :func:`make_node`, which records the parents
and a closure mapping the output gradient to parent gradients.  Nothing is
recorded when no input requires a gradient, so inference runs tape-free.
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .errors import DataError, ShapeError

DTYPES = {"float64": np.float64, "float32": np.float32}


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "kinks", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim and min(arr.shape) < 1:
            raise ShapeError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.kinks = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, dtype={self.dtype})"

    def backward(self, grad=None):
        """Propagate gradients from this tensor into every leaf that requires one."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        tape = Tape.from_output(self)
        tape.backward(self, np.asarray(grad, dtype=self.dtype))

    # Thin operator sugar; the real definitions live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.scale(as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward_fn, op, kinks=None):
    """Wrap ``data`` as the output of ``op``.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    ``kinks`` holds arrays describing where the op is non-differentiable
    (relu masks, pool argmaxes); gradient checks compare them across
    perturbations to skip coordinates that cross a kink.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    out.op = op
    out.kinks = kinks
    return out


class Tape:
    """Topologically ordered view of the graph that produced a tensor."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node.parents):
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def backward(self, out, grad):
        grads = {id(out): grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or not node.requires_grad:
                continue
            if node.backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def kink_signature(self):
        """Bytes summarising every recorded kink pattern, in tape order."""
        parts = []
        for node in self.nodes:
            if node.kinks is not None:
                parts.append(np.ascontiguousarray(node.kinks).tobytes())
        return b"".join(parts)

    def first_nonfinite(self):
        for node in self.nodes:
            if not np.all(np.isfinite(node.data)):
                return node
        return None


class ParamSet:
    """Named learnable tensors plus their momentum buffers."""

    def __init__(self, dtype="float64"):
        self.dtype = DTYPES[dtype] if isinstance(dtype, str) else np.dtype(dtype).type
        self.params = OrderedDict()
        self.momentum = {}

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grad(self, name):
        t = self.params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def num_scalars(self):
        return sum(t.data.size for t in self.params.values())

    def copy(self):
        other = ParamSet(self.dtype)
        for name, t in self.params.items():
            other.add(name, t.data.copy())
        other.momentum = {k: v.copy() for k, v in self.momentum.items()}
        return other

    def astype(self, dtype):
        other = ParamSet(dtype)
        for name, t in self.params.items():
            other.add(name, t.data)
        return other

    def norm(self):
        return float(np.sqrt(sum(np.sum(t.data.astype(np.float64) ** 2) for t in self.params.values())))


MAGIC = b"PCDHV1"


def save_params(params, path):
    """Write the flat binary container.

    Layout: magic, then per parameter: u64 name length, UTF-8 name, u64 rank,
    rank x u64 extents, float64 scalars; all little-endian.  Scalars are
    always widened to float64, which round-trips float32 exactly.
    """
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def params_to_bytes(params):
    chunks = [MAGIC]
    for name, t in params:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", t.data.ndim))
        chunks.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def params_from_bytes(blob, dtype="float64"):
    if not blob.startswith(MAGIC):
        raise DataError("not a parameter container (bad magic)")
    params = ParamSet(dtype)
    pos = len(MAGIC)
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise DataError(f"truncated parameter {name!r}")
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            params.add(name, values)
    except struct.error as exc:
        raise DataError(f"truncated parameter container: {exc}") from None
    return params


def load_params(path, dtype="float64"):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(str(exc)) from None
    return params_from_bytes(blob, dtype)
