"""Minimal reverse-mode automatic differentiation over dense real arrays.

Provides exactly the operators the reconstruction cascade needs: dilated
2D convolution, batch normalization, leaky ReLU, elementwise add/mul, sum
and MSE loss. Everything is numpy-backed. 64-bit is the reference dtype;
32-bit works as a fast mode with relaxed gradient-check tolerances.

The graph is implicit: every op output keeps references to its inputs and
a closure computing the vector-Jacobian product. ``Tensor.backward`` does
one reverse topological traversal, propagating gradients through a
transient table and accumulating into ``.grad`` only at leaf tensors, so
repeated backward calls without a reset add up exactly.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-dimensional real array with optional gradient tracking.

    Tensors created directly are leaves; if ``requires_grad`` is set their
    ``.grad`` starts as zeros and accumulates across backward calls. Op
    outputs carry the closure needed for the reverse pass instead.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = ()
        self._vjp = None

    @classmethod
    def _from_op(cls, data, parents, vjp):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.data)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            if self.data.shape != other.data.shape:
                raise ValueError(f"add shape mismatch: {self.data.shape} vs {other.data.shape}")
            out_data = self.data + other.data
            return Tensor._from_op(out_data, (self, other), lambda g: (g, g))
        out_data = self.data + other
        return Tensor._from_op(out_data, (self,), lambda g: (g,))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            if self.data.shape != other.data.shape:
                raise ValueError(f"mul shape mismatch: {self.data.shape} vs {other.data.shape}")
            out_data = self.data * other.data
            return Tensor._from_op(
                out_data, (self, other), lambda g: (g * other.data, g * self.data)
            )
        out_data = self.data * other
        return Tensor._from_op(out_data, (self,), lambda g: (g * other,))

    __rmul__ = __mul__

    def sum(self):
        out_data = np.asarray(self.data.sum())
        return Tensor._from_op(out_data, (self,), lambda g: (np.broadcast_to(g, self.data.shape),))

    # -- reverse pass -----------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into all reachable leaves."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        flows = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in flows:
                    flows[key] = flows[key] + pg
                else:
                    flows[key] = pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- operators -------------------------------------------------------------


def _conv_patches(x_pad, k, dilation, height, width):
    # strided view: (B, C, k, k, H, W), windows spaced by `dilation`
    b, c = x_pad.shape[:2]
    sb, sc, sh, sw = x_pad.strides
    return np.lib.stride_tricks.as_strided(
        x_pad,
        shape=(b, c, k, k, height, width),
        strides=(sb, sc, dilation * sh, dilation * sw, sh, sw),
        writeable=False,
    )


def conv2d(x, weight, bias=None, dilation=1):
    """2D cross-correlation with dilation and "same" zero padding.

    Parameters
    ----------
    x : Tensor of shape (B, C_in, H, W)
    weight : Tensor of shape (C_out, C_in, k, k), k odd
    bias : Tensor of shape (C_out,) or None
    dilation : spacing between kernel taps, >= 1

    The spatial size is preserved: padding is ``dilation * (k - 1) / 2``
    on each side.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects x (B,C,H,W) and weight (C_out,C_in,k,k)")
    b, c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kh}x{kw}")
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels but weight expects {c_in_w}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")

    k = kh
    pad = dilation * (k - 1) // 2
    x_pad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    patches = _conv_patches(x_pad, k, dilation, h, w)
    # im2col: (B, C_in*k*k, H*W), then one matmul per batch entry
    cols = np.ascontiguousarray(patches).reshape(b, c_in * k * k, h * w)
    w_mat = weight.data.reshape(c_out, c_in * k * k)
    out = np.matmul(w_mat, cols).reshape(b, c_out, h, w)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (c_out,):
            raise ValueError(f"bias must have shape ({c_out},), got {bias.data.shape}")
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g_mat = g.reshape(b, c_out, h * w)
        g_w = np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)
        g_cols = np.matmul(w_mat.T, g_mat).reshape(b, c_in, k, k, h, w)
        g_pad = np.zeros_like(x_pad)
        for p in range(k):
            for q in range(k):
                g_pad[:, :, p * dilation:p * dilation + h, q * dilation:q * dilation + w] += g_cols[:, :, p, q]
        g_x = g_pad[:, :, pad:pad + h, pad:pad + w] if pad else g_pad
        if bias is None:
            return g_x, g_w
        return g_x, g_w, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, vjp)


def leaky_relu(x, alpha=0.01):
    """Elementwise max(x, alpha*x); the subgradient at 0 is alpha."""
    x = as_tensor(x)
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    pos = x.data > 0
    out = np.where(pos, x.data, alpha * x.data)

    def vjp(g):
        return (np.where(pos, g, alpha * g),)

    return Tensor._from_op(out, (x,), vjp)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (B, H, W).

    In training mode the batch statistics normalize the input and the
    running statistics (plain ndarrays, mutated in place) are updated with
    ``momentum``; gradients flow through the batch statistics. In eval
    mode the running statistics are used and the op is a fixed per-channel
    affine map.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    if x.data.ndim != 4:
        raise ValueError("batch_norm expects (B, C, H, W)")
    b, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    n = b * h * w

    if training:
        if n < 2:
            raise ValueError("training-mode batch_norm needs B*H*W >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]

    def vjp(g):
        g_beta = g.sum(axis=axes)
        g_gamma = (g * x_hat).sum(axis=axes)
        g_hat = g * gamma.data[None, :, None, None]
        if training:
            # normalization statistics depend on x
            g_x = (inv_std[None, :, None, None] / n) * (
                n * g_hat
                - g_hat.sum(axis=axes)[None, :, None, None]
                - x_hat * (g_hat * x_hat).sum(axis=axes)[None, :, None, None]
            )
        else:
            g_x = g_hat * inv_std[None, :, None, None]
        return g_x, g_gamma, g_beta

    return Tensor._from_op(out, (x, gamma, beta), vjp)


def mse_loss(pred, target):
    """Mean over all elements of the squared difference."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n)

    def vjp(g):
        scaled = (2.0 / n) * g * diff
        return scaled, -scaled

    return Tensor._from_op(out, (pred, target), vjp)


# -- gradient checking ------------------------------------------------------


def numeric_gradient(fn, tensor, h=1e-5):
    """Central finite-difference gradient of scalar-valued ``fn`` w.r.t. ``tensor``.

    ``fn`` takes no arguments and must read ``tensor.data``; it is invoked
    2*size times with single-element perturbations.
    """
    data = tensor.data
    grad = np.zeros_like(data)
    for idx in np.ndindex(*data.shape):
        orig = data[idx]
        data[idx] = orig + h
        f_plus = float(fn())
        data[idx] = orig - h
        f_minus = float(fn())
        data[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def check_gradients(make_loss, tensors, h=1e-5, tol=1e-6):
    """Compare analytic against numeric gradients for every tensor.

    ``make_loss`` builds and returns a fresh scalar loss Tensor from the
    current tensor values. Returns the worst relative error, normalized by
    the largest numeric gradient magnitude of each tensor. Raises
    AssertionError beyond ``tol``.

    Central differences cannot resolve gradients below the roundoff floor
    eps*|loss|/h (a single ulp of the loss already reads as ~1e-11 at
    h=1e-5), so differences under that floor pass: an exactly-zero
    analytic gradient against pure numeric noise is agreement, not error.
    """
    for t in tensors:
        t.zero_grad()
    loss = make_loss()
    loss.backward()
    floor = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(float(loss.data))) / h
    worst = 0.0
    for t in tensors:
        num = numeric_gradient(lambda: make_loss().data, t, h=h)
        diff = np.abs(t.grad - num).max()
        if diff <= floor:
            continue
        err = diff / max(np.abs(num).max(), 1e-8)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(f"gradient mismatch: relative error {err:.3e} > {tol:.1e}")
    return worst
