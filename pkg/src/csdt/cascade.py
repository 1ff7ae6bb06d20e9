"""Cascaded residual CNN with interleaved data-consistency layers.

The model alternates small residual denoising subnetworks with the
closed-form data-consistency layer. Subnetwork i (1-based) can be dropped
stochastically with probability (i - 1) / (2 * n_c); the first subnetwork
and every data-consistency layer always run. Repeated stochastic passes
give an ensemble whose per-pixel magnitude spread is the uncertainty map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import container
from .autodiff import Tensor, as_tensor, conv2d, leaky_relu, batch_norm, no_grad
from .kspace import dc_layer, zero_filled, to_channels, magnitude


def drop_probability(i, n_c):
    """Drop probability of subnetwork i (1-based) in a cascade of n_c."""
    if not 1 <= i <= n_c:
        raise ValueError(f"subnetwork index {i} outside 1..{n_c}")
    return (i - 1) / (2.0 * n_c)


def receptive_field(dilations, kernel_size=3):
    """Receptive-field side length of a stack of same-padded convolutions."""
    return 1 + (kernel_size - 1) * int(np.sum(dilations))


@dataclass(frozen=True)
class CascadeConfig:
    n_c: int = 3
    layers_per_subnet: int = 5
    hidden_channels: int = 32
    dilations: tuple = None
    stochastic: bool = False
    batch_norm: bool = True
    dc_lambda0: object = "hard"
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_c < 1:
            raise ValueError(f"n_c must be >= 1, got {self.n_c}")
        if self.layers_per_subnet < 2:
            raise ValueError("each subnetwork needs at least 2 conv layers")
        if self.hidden_channels < 1:
            raise ValueError("hidden_channels must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        d = self.dilations
        if d is None:
            # default: dilate-and-contract pattern for the 6-layer variant,
            # plain convolutions otherwise
            d = (1, 2, 4, 2, 1, 1) if self.layers_per_subnet == 6 else (1,) * self.layers_per_subnet
        d = tuple(int(v) for v in d)
        if len(d) != self.layers_per_subnet:
            raise ValueError(
                f"got {len(d)} dilations for {self.layers_per_subnet} layers"
            )
        if any(v < 1 for v in d):
            raise ValueError("dilations must be >= 1")
        object.__setattr__(self, "dilations", d)

    @property
    def receptive_field(self):
        return receptive_field(self.dilations)

    def drop_probabilities(self):
        return np.array([drop_probability(i, self.n_c) for i in range(1, self.n_c + 1)])


class CascadeModel:
    """Parameter store plus forward passes for the cascade."""

    def __init__(self, config, params, bn_state):
        self.config = config
        self.params = params
        self.bn_state = bn_state

    @classmethod
    def build(cls, config, seed=0):
        """He-initialized model; the last conv of each subnet is scaled down
        so an untrained cascade stays close to its zero-filled input."""
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        L = config.layers_per_subnet
        params = {}
        bn_state = {}
        for i in range(1, config.n_c + 1):
            for j in range(1, L + 1):
                c_in = 2 if j == 1 else config.hidden_channels
                c_out = 2 if j == L else config.hidden_channels
                std = np.sqrt(2.0 / (c_in * 3 * 3))
                w = rng.normal(0.0, std, size=(c_out, c_in, 3, 3))
                if j == L:
                    w = w * 0.1
                params[f"net{i}.conv{j}.weight"] = Tensor(w.astype(dt), requires_grad=True)
                params[f"net{i}.conv{j}.bias"] = Tensor(np.zeros(c_out, dt), requires_grad=True)
                if config.batch_norm and j < L:
                    params[f"net{i}.bn{j}.gamma"] = Tensor(np.ones(c_out, dt), requires_grad=True)
                    params[f"net{i}.bn{j}.beta"] = Tensor(np.zeros(c_out, dt), requires_grad=True)
                    bn_state[f"net{i}.bn{j}.running_mean"] = np.zeros(c_out, dt)
                    bn_state[f"net{i}.bn{j}.running_var"] = np.ones(c_out, dt)
        return cls(config, params, bn_state)

    def subnet_forward(self, i, x, training=False):
        """Residual update of subnetwork i on a (B, 2, H, W) tensor."""
        cfg = self.config
        h = x
        for j in range(1, cfg.layers_per_subnet + 1):
            h = conv2d(
                h,
                self.params[f"net{i}.conv{j}.weight"],
                self.params[f"net{i}.conv{j}.bias"],
                dilation=cfg.dilations[j - 1],
            )
            if j < cfg.layers_per_subnet:
                if cfg.batch_norm:
                    h = batch_norm(
                        h,
                        self.params[f"net{i}.bn{j}.gamma"],
                        self.params[f"net{i}.bn{j}.beta"],
                        self.bn_state[f"net{i}.bn{j}.running_mean"],
                        self.bn_state[f"net{i}.bn{j}.running_var"],
                        training=training,
                    )
                h = leaky_relu(h, 0.01)
        return x + h

    def sample_drops(self, rng):
        """One boolean drop decision per subnetwork."""
        return rng.random(self.config.n_c) < self.config.drop_probabilities()

    def forward(self, x_u, y, lines, mode="deterministic", drops=None, rng=None,
                training=False, return_drops=False):
        """Run the cascade.

        x_u may be None, in which case the zero-filled init is computed from
        y. mode "stochastic" samples drop decisions from rng (explicit
        ``drops`` override both); "deterministic" runs every subnetwork.
        """
        if x_u is None:
            x_u = to_channels(zero_filled(y, lines)).astype(self.config.dtype)
        h = as_tensor(x_u)
        if h.data.ndim != 4 or h.data.shape[1] != 2:
            raise ValueError("forward expects (B, 2, H, W) input")
        if drops is None:
            if mode == "stochastic":
                if rng is None:
                    raise ValueError("stochastic mode needs an rng")
                drops = self.sample_drops(rng)
            elif mode == "deterministic":
                drops = np.zeros(self.config.n_c, dtype=bool)
            else:
                raise ValueError(f"unknown mode {mode!r}")
        else:
            # explicit drops are honored as given, even for subnetwork 1;
            # sampled drops never hit it because its probability is 0
            drops = np.asarray(drops, dtype=bool)
            if drops.shape != (self.config.n_c,):
                raise ValueError(f"drops must have shape ({self.config.n_c},)")

        for i in range(1, self.config.n_c + 1):
            if not drops[i - 1]:
                h = self.subnet_forward(i, h, training=training)
            h = dc_layer(h, y, lines, self.config.dc_lambda0)
        if return_drops:
            return h, drops
        return h


@dataclass
class EnsembleResult:
    """Pixelwise statistics of k stochastic reconstructions."""

    mean: np.ndarray
    std: np.ndarray
    k: int
    drops: np.ndarray  # (k, n_c) boolean drop decisions per sample


def reconstruct_ensemble(model, y, lines, k=16, rng=None):
    """Mean magnitude and per-pixel spread over k stochastic forwards.

    Falls back to identical deterministic passes (zero spread) when the
    model was not built for stochastic dropping.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 samples, got {k}")
    if rng is None:
        rng = np.random.default_rng()
    mode = "stochastic" if model.config.stochastic else "deterministic"
    x_u = to_channels(zero_filled(y, lines)).astype(model.config.dtype)
    mags = []
    all_drops = []
    with no_grad():
        for _ in range(k):
            out, drops = model.forward(x_u, y, lines, mode=mode, rng=rng,
                                       return_drops=True)
            mags.append(magnitude(out.data))
            all_drops.append(drops)
    mags = np.stack(mags)
    # statistics on deltas from the first sample: shift-invariant, and exactly
    # zero spread when every pass is bit-identical (all drop probabilities 0)
    delta = mags - mags[0]
    dmean = delta.mean(axis=0)
    return EnsembleResult(
        mean=mags[0] + dmean,
        std=np.sqrt(((delta - dmean) ** 2).mean(axis=0)),
        k=k,
        drops=np.stack(all_drops),
    )


def save_model(model, path):
    """Checkpoint: binary container of arrays plus a JSON config sidecar."""
    entries = {name: t.data for name, t in model.params.items()}
    entries.update(model.bn_state)
    container.write_container(path, entries)
    with open(str(path) + ".json", "w") as f:
        json.dump(asdict(model.config), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    with open(str(path) + ".json") as f:
        raw = json.load(f)
    raw["dilations"] = tuple(raw["dilations"])
    config = CascadeConfig(**raw)
    entries = container.read_container(path)
    fresh = CascadeModel.build(config, seed=0)
    params = {}
    bn_state = {}
    for name, t in fresh.params.items():
        if name not in entries:
            raise ValueError(f"checkpoint {path} is missing parameter {name}")
        arr = entries[name]
        if arr.shape != t.data.shape:
            raise ValueError(
                f"checkpoint {path}: {name} has shape {arr.shape}, "
                f"expected {t.data.shape}"
            )
        params[name] = Tensor(arr.astype(config.dtype), requires_grad=True)
    for name, arr in fresh.bn_state.items():
        if name not in entries:
            raise ValueError(f"checkpoint {path} is missing state {name}")
        bn_state[name] = entries[name].astype(config.dtype)
    return CascadeModel(config, params, bn_state)
