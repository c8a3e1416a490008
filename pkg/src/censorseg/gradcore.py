"""Small reverse-mode autodiff over numpy arrays.

Only the handful of ops needed to train a few-layer conv segmenter:
broadcasted add/mul, log, clamp, relu, channel softmax, reductions,
indexing and a same-padded stride-1 conv2d.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def _unbroadcast(grad, shape):
    # sum out axes that were broadcast during the forward pass
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._op = _op
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _make(self, data, parents, op):
        out = Tensor(data, _op=op)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
        return out

    # -- elementwise -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        out = self._make(self.data + other.data, (self, other), "add")

        def backward(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g, other.shape)

        out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        out = self._make(self.data * other.data, (self, other), "mul")

        def backward(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g * other.data, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g * self.data, other.shape)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def log(self):
        out = self._make(np.log(self.data), (self,), "log")

        def backward(g):
            self.grad += g / self.data

        out._backward = backward
        return out

    def clamp(self, lo, hi):
        out = self._make(np.clip(self.data, lo, hi), (self,), "clamp")

        def backward(g):
            inside = (self.data >= lo) & (self.data <= hi)
            self.grad += g * inside

        out._backward = backward
        return out

    def relu(self):
        out = self._make(np.maximum(self.data, 0), (self,), "relu")

        def backward(g):
            self.grad += g * (self.data > 0)

        out._backward = backward
        return out

    def softmax_channels(self, axis=1):
        """Softmax over the class axis (axis 1 for N,C,H,W maps)."""
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)
        out = self._make(s, (self,), "softmax")

        def backward(g):
            self.grad += s * (g - (g * s).sum(axis=axis, keepdims=True))

        out._backward = backward
        return out

    def __getitem__(self, idx):
        out = self._make(self.data[idx], (self,), "index")

        def backward(g):
            np.add.at(self.grad, idx, g)

        out._backward = backward
        return out

    # -- reductions ------------------------------------------------------

    def sum(self):
        out = self._make(np.asarray(self.data.sum()), (self,), "sum")

        def backward(g):
            self.grad += np.broadcast_to(g, self.shape)

        out._backward = backward
        return out

    def mean(self):
        n = self.data.size
        out = self._make(np.asarray(self.data.mean()), (self,), "mean")

        def backward(g):
            self.grad += np.broadcast_to(g / n, self.shape)

        out._backward = backward
        return out

    # -- graph -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order = topological_order(self)
        for node in order:
            if node._backward is not None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def topological_order(root):
    """Nodes reachable from ``root``, every node after all of its inputs."""
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


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def conv2d(x, kernel, bias):
    """Same-padded, stride-1 2D convolution (cross-correlation).

    x: (N, C, H, W); kernel: (F, C, k, k) with odd k; bias: (F,).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"input must be 4-d (N,C,H,W), got ndim={x.data.ndim}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"kernel must be 4-d (F,C,k,k), got ndim={kernel.data.ndim}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"channel dimension mismatch: input C={c}, kernel C={kc}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel spatial dims must be equal and odd, got {kh}x{kw}")
    if bias.shape != (f,):
        raise ShapeError(f"bias dimension mismatch: expected ({f},), got {bias.shape}")
    k = kh
    pad = k // 2

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # cols: (N*H*W, C*k*k), channel-major to match kernel.reshape(F, -1)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
    kmat = kernel.data.reshape(f, c * k * k)
    y = cols @ kmat.T + bias.data
    out_data = np.ascontiguousarray(y.reshape(n, h, w, f).transpose(0, 3, 1, 2))
    out = x._make(out_data, (x, kernel, bias), "conv2d")

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h * w, f)
        if kernel.requires_grad:
            kernel.grad += (gm.T @ cols).reshape(kernel.shape)
        if bias.requires_grad:
            bias.grad += gm.sum(axis=0)
        if x.requires_grad:
            gcols = (gm @ kmat).reshape(n, h, w, c, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x.grad += gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp

    out._backward = backward
    return out


def sgd_step(params, lr, l2=0.0, momentum=0.0, velocity=None):
    """In-place update ``p <- p - lr * (g + l2 * p)``, with optional momentum.

    ``velocity`` is a list of buffers parallel to ``params`` (created by the
    caller, e.g. with ``[np.zeros_like(p.data) for p in params]``).
    """
    if lr < 0 or l2 < 0:
        raise ValueError("lr and l2 must be non-negative")
    for i, p in enumerate(params):
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"grad shape {p.grad.shape} != param shape {p.data.shape}")
        step = p.grad + l2 * p.data
        if momentum and velocity is not None:
            velocity[i] *= momentum
            velocity[i] += step
            step = velocity[i]
        p.data -= lr * step
