"""Dense n-dimensional arrays with reverse-mode automatic differentiation.

Values are stored in numpy arrays (float32 by default, float64 available for
verification runs). Differentiable ops record themselves on the active
:class:`Tape`; :func:`backward` replays the tape in reverse to populate
gradients.
"""

from __future__ import annotations

import numpy as np

_EPS_BN = 1e-5
_EPS_NORM = 1e-12


class TensorError(ValueError):
    """Raised on shape/domain violations in tensor operations."""


class Tensor:
    """A dense array with an optional gradient slot.

    ``requires_grad`` marks leaf parameters; intermediate results produced
    while a tape is active are tracked automatically.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise TensorError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_active_tape = None


class Tape:
    """Ordered record of differentiable ops; one training step owns one tape."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise TensorError("a tape is already active")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False


def _tracking(*tensors):
    return _active_tape is not None and any(t.requires_grad for t in tensors)


def _record(out, inputs, backward_fn):
    out.requires_grad = True
    _active_tape.nodes.append(_Node(out, inputs, backward_fn))
    return out


def backward(loss, tape=None):
    """Populate ``grad`` for every tracked tensor reachable from ``loss``.

    ``loss`` must be scalar. Tensors feeding the loss through several paths
    accumulate the sum of all path gradients.
    """
    t = tape if tape is not None else _active_tape
    if t is None:
        raise TensorError("backward requires a tape")
    if loss.data.size != 1:
        raise TensorError(f"backward on non-scalar tensor of shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(t.nodes):
        if node.out.grad is None:
            continue
        grads = node.backward_fn(node.out.grad)
        for inp, g in zip(node.inputs, grads):
            if g is not None and inp.requires_grad:
                inp.accumulate_grad(g)


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a, b):
    """Elementwise sum; ``b`` may broadcast against ``a`` (bias patterns)."""
    out = Tensor(a.data + b.data, dtype=a.dtype)
    if _tracking(a, b):

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        _record(out, (a, b), bwd)
    return out


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise TensorError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, dtype=a.dtype)
    if _tracking(a, b):
        _record(out, (a, b), lambda g: (g * b.data, g * a.data))
    return out


def scale(a, s):
    """Multiply by a python scalar."""
    out = Tensor(a.data * s, dtype=a.dtype)
    if _tracking(a):
        _record(out, (a,), lambda g: (g * s,))
    return out


def tsum(a):
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(a.data.sum(), dtype=a.dtype)
    if _tracking(a):
        _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0), dtype=a.dtype)
    if _tracking(a):
        mask = a.data > 0
        _record(out, (a,), lambda g: (g * mask,))
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), dtype=a.dtype)
    if _tracking(a):
        _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def pick(a, index):
    """Select a single element as a scalar tensor (differentiable)."""
    out = Tensor(a.data[index], dtype=a.dtype)
    if _tracking(a):

        def bwd(g):
            ga = np.zeros_like(a.data)
            ga[index] = g
            return (ga,)

        _record(out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product of 2-D tensors [M,K] x [K,P]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise TensorError("matmul expects 2-D tensors")
    if a.shape[1] != b.shape[0]:
        raise TensorError(
            f"matmul inner dimension mismatch: {a.shape} vs {b.shape}"
        )
    out = Tensor(a.data @ b.data, dtype=a.dtype)
    if _tracking(a, b):
        _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


# ---------------------------------------------------------------------------
# convolution / pooling


def _conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, kernel, stride=1, padding=0):
    """2-D cross-correlation of [N,C,H,W] input with an [F,C,kH,kW] kernel."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise TensorError("conv2d expects 4-D input and kernel")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if c != ck:
        raise TensorError(f"conv2d channel mismatch: input {c}, kernel {ck}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise TensorError(
            f"conv2d kernel {kh}x{kw} exceeds padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_flat = np.zeros((n, f, ho * wo), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            # [F,C] @ [N,C,HW] -> [N,F,HW], BLAS-backed
            out_flat += np.matmul(kernel.data[:, :, i, j], patch.reshape(n, c, ho * wo))
    out = Tensor(out_flat.reshape(n, f, ho, wo), dtype=x.dtype)
    if _tracking(x, kernel):

        def bwd(g):
            gflat = np.ascontiguousarray(g.reshape(n, f, ho * wo))
            gxp = np.zeros_like(xp)
            gk = np.zeros_like(kernel.data)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[
                        :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                    ]
                    pflat = patch.reshape(n, c, ho * wo)
                    gk[:, :, i, j] = np.matmul(
                        gflat, pflat.transpose(0, 2, 1)
                    ).sum(axis=0)
                    gxp[
                        :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
                    ] += np.matmul(kernel.data[:, :, i, j].T, gflat).reshape(
                        n, c, ho, wo
                    )
            if padding:
                gx = gxp[:, :, padding:-padding, padding:-padding]
            else:
                gx = gxp
            return gx, gk

        _record(out, (x, kernel), bwd)
    return out


def maxpool2d(x, kernel=3, stride=2, padding=1):
    """Max pooling over [N,C,H,W]; padded cells never win."""
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kernel, stride, padding)
    wo = _conv_out_size(w, kernel, stride, padding)
    neg = np.finfo(x.data.dtype).min
    xp = np.pad(
        x.data,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=neg,
    )
    stacked = np.stack(
        [
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            for i in range(kernel)
            for j in range(kernel)
        ]
    )
    arg = stacked.argmax(axis=0)
    out = Tensor(np.take_along_axis(stacked, arg[None], axis=0)[0], dtype=x.dtype)
    if _tracking(x):

        def bwd(g):
            gxp = np.zeros_like(xp)
            for k in range(kernel * kernel):
                i, j = divmod(k, kernel)
                mask = arg == k
                view = gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                view += g * mask
            if padding:
                return (gxp[:, :, padding:-padding, padding:-padding],)
            return (gxp,)

        _record(out, (x,), bwd)
    return out


def global_avg_pool(x):
    """Per-channel spatial mean: [N,C,H,W] -> [N,C]."""
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)), dtype=x.dtype)
    if _tracking(x):

        def bwd(g):
            return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

        _record(out, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# batch normalization


class RunningStats:
    """EMA mean/variance buffers for one batch-norm layer."""

    def __init__(self, channels, momentum=0.1, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm2d(x, gamma, beta, stats, train):
    """Channel-wise batch normalization with affine transform.

    Train mode normalizes over (N, H, W) with biased variance and updates
    ``stats`` by exponential moving average; eval mode applies the stored
    running statistics.
    """
    n, c, h, w = x.shape
    if train:
        m = n * h * w
        if m < 2:
            raise TensorError("batchnorm2d train mode needs >= 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        stats.mean = (1 - stats.momentum) * stats.mean + stats.momentum * mean.astype(
            stats.mean.dtype
        )
        stats.var = (1 - stats.momentum) * stats.var + stats.momentum * var.astype(
            stats.var.dtype
        )
    else:
        mean = stats.mean.astype(x.data.dtype)
        var = stats.var.astype(x.data.dtype)
    inv_std = 1.0 / np.sqrt(var + _EPS_BN)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(
        xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None],
        dtype=x.dtype,
    )
    if _tracking(x, gamma, beta):

        def bwd(g):
            gbeta = g.sum(axis=(0, 2, 3))
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
            gxhat = g * gamma.data[None, :, None, None]
            if train:
                m = n * h * w
                gx = (
                    gxhat
                    - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / m
                ) * inv_std[None, :, None, None]
            else:
                gx = gxhat * inv_std[None, :, None, None]
            return gx, ggamma, gbeta

        _record(out, (x, gamma, beta), bwd)
    return out


# ---------------------------------------------------------------------------
# normalization / losses


def l2_normalize(v):
    """Scale rows (last axis) to unit Euclidean norm.

    Raises on degenerate (near-zero) vectors rather than dividing by zero.
    """
    norms = np.linalg.norm(v.data, axis=-1, keepdims=True)
    if np.any(norms < _EPS_NORM):
        raise TensorError("l2_normalize: degenerate near-zero vector")
    out = Tensor(v.data / norms, dtype=v.dtype)
    if _tracking(v):
        y = out.data

        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            return ((g - y * dot) / norms,)

        _record(out, (v,), bwd)
    return out


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise TensorError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise TensorError("label index out of range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    logsumexp = np.log(ez.sum(axis=1, keepdims=True)) + zmax
    nll = logsumexp[:, 0] - z[np.arange(n), labels]
    out = Tensor(nll.mean(), dtype=logits.dtype)
    if _tracking(logits):
        probs = ez / ez.sum(axis=1, keepdims=True)

        def bwd(g):
            gz = probs.copy()
            gz[np.arange(n), labels] -= 1.0
            return (gz * (g / n),)

        _record(out, (logits,), bwd)
    return out


def softmax(z):
    """Plain (non-differentiable) softmax over the last axis of an ndarray."""
    z = np.asarray(z, dtype=np.float64)
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    return ez / ez.sum(axis=-1, keepdims=True)
