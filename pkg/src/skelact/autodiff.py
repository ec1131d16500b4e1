"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation builds a new Tensor that remembers its parents and a
closure propagating the output gradient to them. ``Tensor.backward`` walks
the recorded graph once in reverse topological order. Only the operations
the network actually needs exist here, each with an exact analytic
gradient; there is no graph optimization, no dtype besides float64, and no
in-place arithmetic on tracked values.

Gradients accumulate into ``Tensor.grad`` buffers. Leaf tensors marked
non-trainable (inputs, adjacency constants, frozen weights) keep their
gradient buffer at zero: backward skips them, which is both the freezing
semantics and a small saving.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, StateError


class Tensor:
    """A float64 array plus gradient buffer and autodiff bookkeeping."""

    __slots__ = ("data", "grad", "trainable", "name", "_parents", "_backward_fn")

    def __init__(self, data, trainable=False, name=None, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.trainable = bool(trainable)
        self.name = name
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self, grad=None) -> None:
        """Propagate gradients of this tensor to everything upstream.

        ``grad`` seeds the output gradient and must match this tensor's
        shape; it may only be omitted for single-element tensors, where it
        defaults to one. Repeated calls accumulate into leaf gradients.
        """
        if grad is None:
            if self.data.size != 1:
                raise StateError(
                    "backward() without a seed needs a single-element tensor"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise StateError(
                f"seed gradient shape {grad.shape} does not match tensor "
                f"shape {self.data.shape}"
            )

        order = _topological_order(self)
        # Interior gradients are scratch space for this pass; stale values
        # from an earlier backward call must not feed the chain again.
        for node in order:
            if not node.is_leaf:
                node.grad[...] = 0.0
        _accumulate(self, grad)
        for node in order:
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, trainable={self.trainable})"


def _topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from root, root first, parents always after children."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    # Frozen leaves take no gradient; interior nodes always do, or the
    # chain would break.
    if tensor.is_leaf and not tensor.trainable:
        return
    tensor.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(
        axis for axis, size in enumerate(shape)
        if size == 1 and grad.shape[axis] != 1
    )
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad, a.data.shape))
        _accumulate(b, _unbroadcast(grad, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward_fn=backward_fn)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0
    out_data = np.where(mask, x.data, 0.0)

    def backward_fn(grad):
        _accumulate(x, grad * mask)

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)


def matmul_last(x: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with the first axis of 2D ``w``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim < 2 or w.data.ndim != 2:
        raise ConfigurationError(
            "matmul_last needs x with at least 2 axes and a 2D weight"
        )
    out_data = x.data @ w.data

    def backward_fn(grad):
        _accumulate(x, grad @ w.data.T)
        leading = tuple(range(x.data.ndim - 1))
        _accumulate(w, np.tensordot(x.data, grad, axes=(leading, leading)))

    return Tensor(out_data, parents=(x, w), backward_fn=backward_fn)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out_data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward_fn(grad):
        _accumulate(x, grad.transpose(inverse))

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward_fn(grad):
        _accumulate(x, grad.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)


def reduce_sum(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    out_data = x.data.sum(axis=axes)

    def backward_fn(grad):
        expanded = np.expand_dims(grad, axes)
        _accumulate(x, np.broadcast_to(expanded, x.data.shape).copy())

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)


def mean(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    out_data = x.data.mean(axis=axes)

    def backward_fn(grad):
        expanded = np.expand_dims(grad / count, axes)
        _accumulate(x, np.broadcast_to(expanded, x.data.shape).copy())

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)


def temporal_subsample(x: Tensor, stride: int) -> Tensor:
    """Keep every stride-th frame of a (B, C, T, V) tensor."""
    x = _as_tensor(x)
    if stride < 1:
        raise ConfigurationError(f"stride: must be positive, got {stride}")
    out_data = x.data[:, :, ::stride, :].copy()

    def backward_fn(grad):
        buffer = np.zeros_like(x.data)
        buffer[:, :, ::stride, :] = grad
        _accumulate(x, buffer)

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)


def temporal_conv(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Depthwise convolution over the frame axis of a (B, C, T, V) tensor.

    ``kernel`` has shape (C, K) with K odd; the input is zero padded by
    (K - 1) / 2 on both sides, so with stride 1 the frame count is
    preserved and with stride s it becomes ceil(T / s).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 4:
        raise ConfigurationError("temporal_conv expects a (B, C, T, V) input")
    channels, taps = kernel.data.shape
    if channels != x.data.shape[1]:
        raise ConfigurationError(
            f"kernel has {channels} channels, input has {x.data.shape[1]}"
        )
    if taps % 2 != 1:
        raise ConfigurationError(f"kernel size must be odd, got {taps}")
    if stride < 1:
        raise ConfigurationError(f"stride: must be positive, got {stride}")

    batch, _, frames, vertices = x.data.shape
    pad = (taps - 1) // 2
    padded = np.zeros((batch, channels, frames + 2 * pad, vertices))
    padded[:, :, pad:pad + frames, :] = x.data
    out_frames = (frames + 2 * pad - taps) // stride + 1
    span = stride * (out_frames - 1) + 1

    out_data = np.zeros((batch, channels, out_frames, vertices))
    for tap in range(taps):
        segment = padded[:, :, tap:tap + span:stride, :]
        out_data += segment * kernel.data[None, :, tap, None, None]

    def backward_fn(grad):
        grad_padded = np.zeros_like(padded)
        grad_kernel = np.zeros_like(kernel.data)
        for tap in range(taps):
            segment = padded[:, :, tap:tap + span:stride, :]
            grad_kernel[:, tap] = (segment * grad).sum(axis=(0, 2, 3))
            grad_padded[:, :, tap:tap + span:stride, :] += (
                grad * kernel.data[None, :, tap, None, None]
            )
        _accumulate(kernel, grad_kernel)
        _accumulate(x, grad_padded[:, :, pad:pad + frames, :])

    return Tensor(out_data, parents=(x, kernel), backward_fn=backward_fn)


_BN_AXES = (0, 2, 3)


def batch_norm_batch(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Normalize a (B, C, T, V) tensor with its own batch statistics.

    The backward pass accounts for the dependence of mean and variance on
    the input, so gradients are exact in training mode.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise ConfigurationError("batch_norm expects a (B, C, T, V) input")
    mu = x.data.mean(axis=_BN_AXES, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=_BN_AXES, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normalized = (x.data - mu) * inv_std
    out_data = gamma.data[None, :, None, None] * normalized + beta.data[None, :, None, None]

    def backward_fn(grad):
        _accumulate(beta, grad.sum(axis=_BN_AXES))
        _accumulate(gamma, (grad * normalized).sum(axis=_BN_AXES))
        grad_normalized = grad * gamma.data[None, :, None, None]
        mean_grad = grad_normalized.mean(axis=_BN_AXES, keepdims=True)
        mean_grad_normalized = (grad_normalized * normalized).mean(
            axis=_BN_AXES, keepdims=True
        )
        _accumulate(
            x,
            inv_std * (grad_normalized - mean_grad - normalized * mean_grad_normalized),
        )

    return Tensor(out_data, parents=(x, gamma, beta), backward_fn=backward_fn)


def batch_norm_given(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize with fixed statistics, the evaluation and frozen path.

    The statistics enter as constants, so the backward pass is a plain
    per-channel affine map.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise ConfigurationError("batch_norm expects a (B, C, T, V) input")
    inv_std = 1.0 / np.sqrt(np.asarray(running_var, dtype=np.float64) + eps)
    mu = np.asarray(running_mean, dtype=np.float64)
    normalized = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * normalized + beta.data[None, :, None, None]

    def backward_fn(grad):
        _accumulate(beta, grad.sum(axis=_BN_AXES))
        _accumulate(gamma, (grad * normalized).sum(axis=_BN_AXES))
        _accumulate(
            x, grad * (gamma.data * inv_std)[None, :, None, None]
        )

    return Tensor(out_data, parents=(x, gamma, beta), backward_fn=backward_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scaling keeps the expectation unchanged."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        mask = np.ones_like(x.data)
    else:
        mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out_data = x.data * mask

    def backward_fn(grad):
        _accumulate(x, grad * mask)

    return Tensor(out_data, parents=(x,), backward_fn=backward_fn)
