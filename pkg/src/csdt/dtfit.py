"""Diffusion tensor estimation and derived cardiac maps.

Fits a symmetric 3x3 tensor per pixel by log-linear least squares on the
Stejskal-Tanner model ln S = ln S0 - b g^T D g, then derives fractional
anisotropy, mean diffusivity and the helix angle of the primary
eigenvector in the local short-axis frame.

Tensor components are stored in the order (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COMPONENT_NAMES = ("dxx", "dyy", "dzz", "dxy", "dxz", "dyz")


def design_matrix(bvalues, directions):
    """Rows map (6 tensor components, ln S0) to ln S for each measurement."""
    b = np.asarray(bvalues, dtype=float)
    g = np.asarray(directions, dtype=float)
    if g.shape != (b.shape[0], 3):
        raise ValueError(f"directions shape {g.shape} does not match {b.shape[0]} b-values")
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    cols = [
        -b * gx * gx,
        -b * gy * gy,
        -b * gz * gz,
        -2.0 * b * gx * gy,
        -2.0 * b * gx * gz,
        -2.0 * b * gy * gz,
        np.ones_like(b),
    ]
    return np.stack(cols, axis=1)


@dataclass
class DiffusionTensorField:
    """Per-pixel tensor (6 unique components), fitted S0 and validity mask."""

    d6: np.ndarray    # (H, W, 6)
    s0: np.ndarray    # (H, W)
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if self.d6.ndim != 3 or self.d6.shape[-1] != 6:
            raise ValueError(f"d6 must have shape (H, W, 6), got {self.d6.shape}")
        self.valid = np.asarray(self.valid, dtype=bool)

    def full(self):
        """Expand to symmetric (H, W, 3, 3) tensors."""
        h, w, _ = self.d6.shape
        D = np.zeros((h, w, 3, 3))
        dxx, dyy, dzz, dxy, dxz, dyz = np.moveaxis(self.d6, -1, 0)
        D[..., 0, 0] = dxx
        D[..., 1, 1] = dyy
        D[..., 2, 2] = dzz
        D[..., 0, 1] = D[..., 1, 0] = dxy
        D[..., 0, 2] = D[..., 2, 0] = dxz
        D[..., 1, 2] = D[..., 2, 1] = dyz
        return D

    @classmethod
    def from_full(cls, D, s0, valid):
        D = np.asarray(D, dtype=float)
        d6 = np.stack(
            [D[..., 0, 0], D[..., 1, 1], D[..., 2, 2],
             D[..., 0, 1], D[..., 0, 2], D[..., 1, 2]],
            axis=-1,
        )
        return cls(d6, np.asarray(s0, dtype=float), valid)


def combine_averages(images):
    """Complex mean over the averages axis, then magnitude.

    images has shape (n_entries, n_averages, H, W); averaging in the
    complex domain before taking the magnitude keeps the noise floor lower
    than averaging magnitudes.
    """
    return np.abs(np.asarray(images).mean(axis=1))


def fit_tensor(stack, mask=None):
    """Log-linear least-squares tensor fit of a DWI stack.

    ``stack`` needs ``images`` (n_entries, n_averages, H, W) and a
    ``protocol`` with ``bvalues`` and ``directions``. Pixels outside
    ``mask`` or with nonpositive averaged signal in any entry are marked
    invalid and left zero.
    """
    s = combine_averages(stack.images)
    n, h, w = s.shape
    X = design_matrix(stack.protocol.bvalues, stack.protocol.directions)
    if np.linalg.matrix_rank(X) < 7:
        raise ValueError("protocol directions are collinear; tensor fit is underdetermined")
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    valid = np.asarray(mask, dtype=bool) & (s > 0).all(axis=0)

    d6 = np.zeros((h, w, 6))
    s0 = np.zeros((h, w))
    if valid.any():
        lnS = np.log(s[:, valid])            # (n, m)
        coef = np.linalg.pinv(X) @ lnS       # (7, m)
        d6[valid] = coef[:6].T
        s0[valid] = np.exp(coef[6])
    return DiffusionTensorField(d6, s0, valid)


def eig_sym3(D):
    """Eigenvalues (descending) and matching orthonormal eigenvectors.

    Works on any (..., 3, 3) stack of symmetric matrices; eigenvector k is
    ``vecs[..., :, k]``.
    """
    w, v = np.linalg.eigh(np.asarray(D, dtype=float))
    return w[..., ::-1], v[..., :, ::-1]


def md(l1, l2, l3):
    """Mean diffusivity: average eigenvalue."""
    return (np.asarray(l1, float) + np.asarray(l2, float) + np.asarray(l3, float)) / 3.0


def fa(l1, l2, l3):
    """Fractional anisotropy, clamped to [0, 1]; all-zero eigenvalues give 0."""
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    l3 = np.asarray(l3, dtype=float)
    m = (l1 + l2 + l3) / 3.0
    num = (l1 - m) ** 2 + (l2 - m) ** 2 + (l3 - m) ** 2
    den = l1**2 + l2**2 + l3**2
    out = np.zeros(np.broadcast(l1, l2, l3).shape)
    nz = den > 0
    out[nz] = np.sqrt(1.5 * num[nz] / den[nz])
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def local_frame(rows, cols, center):
    """Short-axis frame per pixel: radial, circumferential, longitudinal.

    Radial points outward from the LV center, circumferential is its 90
    degree counterclockwise in-plane rotation, longitudinal is the slice
    normal. Vectors come back as (..., 3) arrays; at the center pixel the
    in-plane vectors are zero.
    """
    dy = np.asarray(rows, dtype=float) - center[0]
    dx = np.asarray(cols, dtype=float) - center[1]
    r = np.hypot(dx, dy)
    rr = np.where(r > 0, r, 1.0)
    zeros = np.zeros_like(rr)
    u_r = np.stack([dx / rr, dy / rr, zeros], axis=-1)
    u_c = np.stack([-dy / rr, dx / rr, zeros], axis=-1)
    u_l = np.zeros(u_r.shape)
    u_l[..., 2] = 1.0
    return u_r, u_c, u_l


def helix_angle(e1, pixel, center):
    """Helix angle in degrees of a primary eigenvector at one pixel.

    The eigenvector's sign is flipped so its circumferential component is
    nonnegative (eigenvectors are sign-ambiguous), which pins the result
    to [-90, 90]; a purely longitudinal e1 maps to +90 by convention.
    """
    if pixel[0] == center[0] and pixel[1] == center[1]:
        raise ValueError("helix angle is undefined at the center pixel")
    _, u_c, u_l = local_frame(pixel[0], pixel[1], center)
    e1 = np.asarray(e1, dtype=float)
    c = float(e1 @ u_c)
    l = float(e1 @ u_l)
    if c < 0 or (c == 0 and l < 0):
        c, l = -c, -l
    if c == 0:
        return 90.0 if l != 0 else 0.0
    return float(np.degrees(np.arctan2(l, c)))


def helix_angle_map(e1_field, center, valid=None):
    """Vectorized helix angle over an (H, W, 3) primary-eigenvector field.

    Invalid pixels (and the center pixel, where the frame degenerates)
    come back as 0; use the validity mask to gate any statistics.
    """
    h, w, _ = e1_field.shape
    rows, cols = np.indices((h, w))
    u_r, u_c, u_l = local_frame(rows, cols, center)
    c = np.einsum("hwk,hwk->hw", e1_field, u_c)
    l = np.einsum("hwk,hwk->hw", e1_field, u_l)
    flip = (c < 0) | ((c == 0) & (l < 0))
    c = np.where(flip, -c, c)
    l = np.where(flip, -l, l)
    ha = np.degrees(np.arctan2(l, c))
    at_center = (np.hypot(cols - center[1], rows - center[0]) == 0)
    ha = np.where(at_center, 0.0, ha)
    if valid is not None:
        ha = np.where(valid, ha, 0.0)
    return ha


@dataclass
class TensorMetrics:
    """Per-pixel maps derived from a fitted tensor field."""

    fa: np.ndarray      # (H, W) in [0, 1]
    md: np.ndarray      # (H, W) mm^2/s
    ha: np.ndarray      # (H, W) degrees in [-90, 90]
    evals: np.ndarray   # (H, W, 3) descending
    valid: np.ndarray   # (H, W) bool


def tensor_metrics(field, center):
    """FA, MD, HA and eigenvalue maps of a DiffusionTensorField.

    Negative fitted eigenvalues are kept (FA is clamped) but drop the
    pixel from the validity mask; clamping tensors would bias comparisons.
    """
    evals, evecs = eig_sym3(field.full())
    evals = np.where(field.valid[..., None], evals, 0.0)
    fa_map = fa(evals[..., 0], evals[..., 1], evals[..., 2])
    md_map = md(evals[..., 0], evals[..., 1], evals[..., 2])
    e1 = evecs[..., :, 0]
    ha_map = helix_angle_map(e1, center, valid=field.valid)
    valid = field.valid & (evals[..., 2] > 0)
    return TensorMetrics(
        fa=np.where(field.valid, fa_map, 0.0),
        md=np.where(field.valid, md_map, 0.0),
        ha=ha_map,
        evals=evals,
        valid=valid,
    )
