"""Synthetic short-axis cardiac diffusion phantom.

An annular left-ventricle cross-section whose fiber helix angle varies
linearly across the wall (positive at the endocardium, negative at the
epicardium by default). Diffusion-weighted images follow the
Stejskal-Tanner decay S = S0 * exp(-b g^T D g) inside the myocardium and
a flat background level outside; noise is added to the complex channels
so magnitudes are Rician, as in real MR data.

All constants here are phantom choices for testing the pipeline, not
physiological claims beyond plausibility.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from typing import NamedTuple

import numpy as np

from . import container
from .dtfit import DiffusionTensorField, design_matrix, local_frame


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, tensor eigenvalues and signal model of one subject."""

    shape: tuple = (64, 64)
    center: tuple = (32.0, 32.0)          # (row, col) pixels
    r_endo: float = 10.0
    r_epi: float = 18.0
    ha_endo: float = 60.0                  # degrees
    ha_epi: float = -60.0
    eigenvalues: tuple = (1.7e-3, 0.6e-3, 0.3e-3)  # mm^2/s
    s0: float = 1.0
    background: float = 0.05
    noise_std: float = 0.0                 # fraction of s0, per complex channel
    seed: int = 0

    def __post_init__(self):
        h, w = self.shape
        if h < 4 or w < 4:
            raise ValueError(f"grid {self.shape} is too small")
        if not 0 < self.r_endo < self.r_epi <= min(h, w) / 2:
            raise ValueError(
                f"need 0 < r_endo < r_epi <= {min(h, w) / 2}, "
                f"got r_endo={self.r_endo}, r_epi={self.r_epi}"
            )
        l1, l2, l3 = self.eigenvalues
        if not l1 >= l2 >= l3 > 0:
            raise ValueError(f"eigenvalues must be descending positive, got {self.eigenvalues}")
        if self.s0 <= 0:
            raise ValueError(f"s0 must be positive, got {self.s0}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass(frozen=True, eq=False)
class DiffusionProtocol:
    """Acquisition scheme: one (b, direction) pair per entry plus averages."""

    bvalues: np.ndarray     # (n,) s/mm^2
    directions: np.ndarray  # (n, 3) unit vectors
    averages: int = 4

    def __post_init__(self):
        b = np.asarray(self.bvalues, dtype=float)
        g = np.asarray(self.directions, dtype=float)
        if b.ndim != 1 or g.shape != (b.size, 3):
            raise ValueError(f"need matching (n,) b-values and (n, 3) directions, "
                             f"got {b.shape} and {g.shape}")
        if self.averages < 1:
            raise ValueError(f"averages must be >= 1, got {self.averages}")
        if not (b >= 0).all():
            raise ValueError("b-values must be nonnegative")
        if not (b < 1e-6).any():
            raise ValueError("protocol needs at least one b=0 entry")
        norms = np.linalg.norm(g, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("gradient directions must be unit vectors (to 1e-9)")
        if np.linalg.matrix_rank(design_matrix(b, g)) < 7:
            raise ValueError("directions are collinear; the tensor fit would be underdetermined")
        object.__setattr__(self, "bvalues", b)
        object.__setattr__(self, "directions", g)

    @property
    def n_entries(self):
        return self.bvalues.shape[0]


def spread_directions(n):
    """n near-uniform unit vectors on the upper hemisphere (golden spiral)."""
    if n < 6:
        raise ValueError(f"need at least 6 directions, got {n}")
    k = np.arange(n) + 0.5
    z = k / n
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    rho = np.sqrt(1.0 - z**2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def default_protocol(n_directions=12, bvalue=1000.0, averages=4):
    """b=0 plus ``n_directions`` spread directions at ``bvalue`` s/mm^2."""
    g = np.vstack([[0.0, 0.0, 1.0], spread_directions(n_directions)])
    b = np.concatenate([[0.0], np.full(n_directions, float(bvalue))])
    return DiffusionProtocol(b, g, averages=averages)


class PhantomTruth(NamedTuple):
    field: DiffusionTensorField
    ha: np.ndarray    # (H, W) degrees, 0 outside the myocardium
    mask: np.ndarray  # (H, W) bool myocardium


def radius_map(spec):
    rows, cols = np.indices(spec.shape)
    return np.hypot(cols - spec.center[1], rows - spec.center[0])


def myocardium_mask(spec):
    r = radius_map(spec)
    return (r >= spec.r_endo) & (r <= spec.r_epi)


def make_tensor_field(spec):
    """Ground-truth tensor field, helix-angle map and myocardium mask.

    The primary eigenvector sits in the circumferential-longitudinal
    plane at the local helix angle, the tertiary along the radial
    direction, so every myocardial tensor has exactly the spec
    eigenvalues.
    """
    r = radius_map(spec)
    mask = (r >= spec.r_endo) & (r <= spec.r_epi)
    t = np.clip((r - spec.r_endo) / (spec.r_epi - spec.r_endo), 0.0, 1.0)
    ha = np.where(mask, spec.ha_endo + (spec.ha_epi - spec.ha_endo) * t, 0.0)

    rows, cols = np.indices(spec.shape)
    u_r, u_c, u_l = local_frame(rows, cols, spec.center)
    a = np.radians(ha)[..., None]
    e1 = np.cos(a) * u_c + np.sin(a) * u_l
    e2 = -np.sin(a) * u_c + np.cos(a) * u_l
    e3 = u_r

    l1, l2, l3 = spec.eigenvalues
    D = (
        l1 * np.einsum("hwi,hwj->hwij", e1, e1)
        + l2 * np.einsum("hwi,hwj->hwij", e2, e2)
        + l3 * np.einsum("hwi,hwj->hwij", e3, e3)
    )
    D = np.where(mask[..., None, None], D, 0.0)
    s0 = np.where(mask, spec.s0, spec.background)
    field = DiffusionTensorField.from_full(D, s0, mask)
    return PhantomTruth(field, ha, mask)


@dataclass(eq=False)
class DWIStack:
    """All diffusion-weighted images of one subject plus its ground truth."""

    images: np.ndarray  # complex (n_entries, n_averages, H, W)
    protocol: DiffusionProtocol
    field: DiffusionTensorField
    ha: np.ndarray
    mask: np.ndarray
    spec: PhantomSpec

    def frames(self):
        """Flatten to (n_entries * n_averages, H, W) complex frames."""
        e, a, h, w = self.images.shape
        return self.images.reshape(e * a, h, w)


def simulate_dwi(truth, protocol, spec, rng=None):
    """Stejskal-Tanner signal synthesis with complex Gaussian noise.

    ``truth`` is the PhantomTruth from make_tensor_field(spec). The noise
    std is spec.noise_std * spec.s0 per channel, drawn independently per
    entry and per average; rng defaults to one seeded with spec.seed.
    """
    field, ha, mask = truth
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    D = field.full()
    g = protocol.directions
    b = protocol.bvalues
    adc = np.einsum("ei,hwij,ej->ehw", g, D, g)
    mag = np.where(mask, spec.s0 * np.exp(-b[:, None, None] * adc), spec.background)

    shape = (protocol.n_entries, protocol.averages) + spec.shape
    images = np.broadcast_to(mag[:, None], shape).astype(complex)
    if spec.noise_std > 0:
        sigma = spec.noise_std * spec.s0
        images = images + sigma * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )
    else:
        images = images.copy()
    return DWIStack(images, protocol, field, ha, mask, spec)


@dataclass(frozen=True)
class PhantomRanges:
    """Per-subject randomization ranges for dataset generation."""

    center_jitter: float = 2.0           # pixels, uniform in +-jitter per axis
    r_endo: tuple = (8.0, 12.0)
    wall_thickness: tuple = (5.0, 8.0)   # r_epi = r_endo + wall
    ha_endo: tuple = (45.0, 70.0)
    ha_epi: tuple = (-70.0, -45.0)


@dataclass
class Dataset:
    train: list
    val: list
    test: list

    def all_stacks(self):
        return self.train + self.val + self.test


def sample_spec(base, ranges, rng, seed):
    """One randomized subject geometry drawn from ``ranges`` around ``base``."""
    j = ranges.center_jitter
    center = (
        base.center[0] + rng.uniform(-j, j),
        base.center[1] + rng.uniform(-j, j),
    )
    r_endo = rng.uniform(*ranges.r_endo)
    r_epi = r_endo + rng.uniform(*ranges.wall_thickness)
    return replace(
        base,
        center=center,
        r_endo=r_endo,
        r_epi=r_epi,
        ha_endo=rng.uniform(*ranges.ha_endo),
        ha_epi=rng.uniform(*ranges.ha_epi),
        seed=seed,
    )


def make_dataset(splits, base=None, ranges=None, protocol=None, seed=0):
    """Disjoint train/val/test DWI stacks with randomized geometry.

    ``splits`` is (n_train, n_val, n_test); every subject gets its own
    geometry and noise seed, so the whole dataset is a pure function of
    ``seed``.
    """
    if len(splits) != 3 or any(int(n) < 0 for n in splits):
        raise ValueError(f"splits must be three nonnegative counts, got {splits}")
    base = base if base is not None else PhantomSpec()
    ranges = ranges if ranges is not None else PhantomRanges()
    protocol = protocol if protocol is not None else default_protocol()
    rng = np.random.default_rng(seed)
    stacks = []
    for _ in range(int(sum(splits))):
        sub_seed = int(rng.integers(0, 2**63))
        spec = sample_spec(base, ranges, rng, sub_seed)
        truth = make_tensor_field(spec)
        stacks.append(simulate_dwi(truth, protocol, spec))
    n_tr, n_va = int(splits[0]), int(splits[1])
    return Dataset(
        train=stacks[:n_tr],
        val=stacks[n_tr:n_tr + n_va],
        test=stacks[n_tr + n_va:],
    )


def save_dwi(stack, path):
    """Write a DWI stack: binary container + JSON protocol/spec sidecar."""
    entries = {
        "images.real": stack.images.real.astype(np.float64),
        "images.imag": stack.images.imag.astype(np.float64),
        "truth.d6": stack.field.d6,
        "truth.s0": stack.field.s0,
        "truth.valid": stack.field.valid.astype(np.float64),
        "ha": stack.ha,
        "mask": stack.mask.astype(np.float64),
    }
    container.write_container(path, entries)
    doc = {
        "bvalues": [float(b) for b in stack.protocol.bvalues],
        "directions": [[float(c) for c in g] for g in stack.protocol.directions],
        "averages": int(stack.protocol.averages),
        "spec": asdict(stack.spec),
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _spec_from_dict(d):
    d = dict(d)
    for key in ("shape", "center", "eigenvalues"):
        d[key] = tuple(d[key])
    return PhantomSpec(**d)


def load_dwi(path):
    entries = container.read_container(path)
    with open(str(path) + ".json") as f:
        doc = json.load(f)
    protocol = DiffusionProtocol(
        np.asarray(doc["bvalues"], dtype=float),
        np.asarray(doc["directions"], dtype=float),
        averages=int(doc["averages"]),
    )
    images = entries["images.real"] + 1j * entries["images.imag"]
    field = DiffusionTensorField(
        entries["truth.d6"], entries["truth.s0"], entries["truth.valid"] > 0.5
    )
    return DWIStack(
        images=images,
        protocol=protocol,
        field=field,
        ha=entries["ha"],
        mask=entries["mask"] > 0.5,
        spec=_spec_from_dict(doc["spec"]),
    )
