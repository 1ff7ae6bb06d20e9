"""Centered unitary 2D Fourier transforms, masked encoding and data consistency.

Images and k-space grids are complex ndarrays of shape (..., H, W) with the
k-space origin at (H//2, W//2). The transforms are unitary (1/sqrt(N) each
way), so forward followed by inverse is exact and Parseval holds. At the
network boundary, complex arrays are split into 2 real channels (real,
imaginary) on axis -3.

Undersampling is one-dimensional: a boolean line mask over the H axis
(phase-encode lines) selects which rows of k-space were acquired.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor


def fft2c(x):
    """Centered unitary 2D DFT over the trailing two axes."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    k = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2c(k):
    """Inverse of :func:`fft2c`."""
    k = np.fft.ifftshift(k, axes=(-2, -1))
    x = np.fft.ifft2(k, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def to_channels(z):
    """Complex (..., H, W) -> real (..., 2, H, W)."""
    return np.stack([z.real, z.imag], axis=-3)


def to_complex(c):
    """Real (..., 2, H, W) -> complex (..., H, W)."""
    return c[..., 0, :, :] + 1j * c[..., 1, :, :]


def magnitude(c):
    """Magnitude image from a 2-channel array."""
    return np.sqrt(c[..., 0, :, :] ** 2 + c[..., 1, :, :] ** 2)


def _line_grid(lines, shape):
    """Broadcast a (..., H) line mask against a (..., H, W) grid."""
    lines = np.asarray(lines, dtype=bool)
    return np.broadcast_to(lines[..., :, None], shape)


def apply_mask(k, lines):
    """Zero out the unacquired k-space lines."""
    return np.where(_line_grid(lines, k.shape), k, 0.0)


def undersample(x, lines):
    """Simulate acquisition: transform to k-space and keep only masked lines."""
    return apply_mask(fft2c(x), lines)


def zero_filled(y, lines):
    """Inverse transform of the masked measurements (the cascade's init)."""
    return ifft2c(apply_mask(y, lines))


def _dc_lambda(lambda0):
    if isinstance(lambda0, str):
        if lambda0 != "hard":
            raise ValueError(f"lambda0 must be a nonnegative float or 'hard', got {lambda0!r}")
        return True, None
    lam = float(lambda0)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"lambda0 must be finite and >= 0, got {lam}")
    return False, lam


def data_consistency(z, y, lines, lambda0="hard"):
    """Closed-form blend of an estimate's k-space with the measurements.

    On acquired lines the output k-space is ``(Fz + lambda0*y) / (1 + lambda0)``,
    elsewhere it is ``Fz`` unchanged; ``lambda0="hard"`` replaces acquired
    samples with ``y`` exactly (the noiseless limit).
    """
    hard, lam = _dc_lambda(lambda0)
    kz = fft2c(z)
    m = _line_grid(lines, kz.shape)
    if hard:
        kz = np.where(m, y, kz)
    else:
        kz = np.where(m, (kz + lam * y) / (1.0 + lam), kz)
    return ifft2c(kz)


def dc_layer(z, y, lines, lambda0="hard"):
    """Differentiable data-consistency layer on 2-channel tensors.

    ``z`` is a Tensor of shape (B, 2, H, W); ``y`` a complex (B, H, W) or
    (H, W) measurement grid; ``lines`` the matching boolean line mask. The
    map is affine in ``z`` with self-adjoint linear part, so the backward
    pass applies the same masked blend (without the measurement term) to
    the incoming gradient.
    """
    z = as_tensor(z)
    if z.data.ndim != 4 or z.data.shape[1] != 2:
        raise ValueError("dc_layer expects a (B, 2, H, W) tensor")
    hard, lam = _dc_lambda(lambda0)
    dtype = z.data.dtype
    m = _line_grid(lines, (z.data.shape[0],) + z.data.shape[-2:])

    out = data_consistency(to_complex(z.data), y, lines, lambda0)
    out_ch = to_channels(out).astype(dtype, copy=False)

    def vjp(g):
        kg = fft2c(to_complex(g))
        if hard:
            kg = np.where(m, 0.0, kg)
        else:
            kg = np.where(m, kg / (1.0 + lam), kg)
        return (to_channels(ifft2c(kg)).astype(dtype, copy=False),)

    return Tensor._from_op(out_ch, (z,), vjp)
