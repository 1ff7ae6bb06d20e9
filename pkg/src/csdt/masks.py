"""1D Gaussian variable-density Cartesian sampling masks.

A mask is a boolean vector over the N_y phase-encode lines of a k-space
grid whose origin sits at index N_y // 2. Lines are drawn without
replacement with probability proportional to a Gaussian in the distance
from the origin line, after forcing a block of center lines, until the
target count round(N_y / uf) is reached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class MaskSpec:
    """Parameters of one mask draw.

    uf is the nominal undersampling factor; sigma_fraction scales the
    Gaussian width relative to ny; center_lines lines nearest the origin
    are always sampled; seed fixes the draw.
    """

    ny: int
    uf: float
    sigma_fraction: float = 0.25
    center_lines: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.ny < 1:
            raise ValueError(f"ny must be >= 1, got {self.ny}")
        if not 1.0 <= float(self.uf) <= self.ny:
            raise ValueError(f"uf must lie in [1, ny], got {self.uf}")
        if not 0.0 < self.sigma_fraction:
            raise ValueError(f"sigma_fraction must be > 0, got {self.sigma_fraction}")
        if self.center_lines < 1:
            raise ValueError(f"center_lines must be >= 1, got {self.center_lines}")


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean line mask; ``lines[i]`` is True where line i was acquired."""

    lines: np.ndarray

    def __post_init__(self):
        lines = np.asarray(self.lines, dtype=bool)
        if lines.ndim != 1:
            raise ValueError("lines must be a 1D boolean array")
        if not lines.any():
            raise ValueError("a mask must sample at least one line")
        object.__setattr__(self, "lines", lines)

    @property
    def ny(self):
        return self.lines.shape[0]

    @property
    def num_sampled(self):
        return int(self.lines.sum())

    @property
    def effective_uf(self):
        return self.ny / self.num_sampled

    @property
    def indices(self):
        return np.flatnonzero(self.lines)


def target_line_count(ny, uf):
    """round(ny / uf) with half-up tie break, floored at 1."""
    return max(1, int(np.floor(ny / float(uf) + 0.5)))


def center_line_indices(ny, count):
    """The ``count`` line indices nearest the origin line ny // 2.

    Ties (equidistant lines on either side) resolve to the lower index,
    so the block grows symmetrically around the origin.
    """
    idx = np.arange(ny)
    d = np.abs(idx - ny // 2)
    order = np.lexsort((idx, d))
    return np.sort(order[:count])


def line_weights(ny, sigma_fraction=0.25):
    """Unnormalized Gaussian density over line distance from the origin."""
    d = np.arange(ny) - ny // 2
    sigma = sigma_fraction * ny
    return np.exp(-(d.astype(float) ** 2) / (2.0 * sigma**2))


def generate_mask(spec):
    """Draw one mask for ``spec``; deterministic in ``spec.seed``."""
    n_keep = target_line_count(spec.ny, spec.uf)
    if spec.center_lines > n_keep:
        raise ValueError(
            f"center_lines={spec.center_lines} exceeds the sampled-line "
            f"budget {n_keep} at uf={spec.uf}"
        )
    lines = np.zeros(spec.ny, dtype=bool)
    lines[center_line_indices(spec.ny, spec.center_lines)] = True

    # draw-and-reject without replacement via the inverse CDF
    cdf = np.cumsum(line_weights(spec.ny, spec.sigma_fraction))
    cdf /= cdf[-1]
    rng = np.random.default_rng(spec.seed)
    kept = int(lines.sum())
    while kept < n_keep:
        i = int(np.searchsorted(cdf, rng.random(), side="right"))
        if not lines[i]:
            lines[i] = True
            kept += 1
    return SamplingMask(lines)


def save_mask(mask, path, spec=None):
    """Write a mask as JSON; the sampled-index list is the authoritative field."""
    doc = {"ny": mask.ny, "lines": [int(i) for i in mask.indices]}
    if spec is not None:
        doc["spec"] = asdict(spec)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_mask(path):
    with open(path) as f:
        doc = json.load(f)
    ny = int(doc["ny"])
    idx = np.asarray(doc["lines"], dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= ny):
        raise ValueError(f"mask file {path} has line indices outside [0, {ny})")
    lines = np.zeros(ny, dtype=bool)
    lines[idx] = True
    return SamplingMask(lines)
