"""Shared fixtures: the toy phantom dataset and the two trained toy models.

The trainings are the expensive part of the suite (a few minutes each), so
they are session-scoped and shared between the training tests and the
acceptance gate.
"""

import time

import numpy as np
import pytest

from csdt.cascade import CascadeConfig, CascadeModel
from csdt.kspace import undersample, zero_filled
from csdt.masks import MaskSpec, generate_mask
from csdt.metrics import psnr
from csdt.phantom import Dataset, default_protocol, make_dataset
from csdt.training import TrainConfig, train

TOY_UF = 3.0


def frozen_masks(n, ny, uf, seed):
    """n deterministic masks for held-out evaluation."""
    rng = np.random.default_rng(seed)
    return [
        generate_mask(MaskSpec(ny=ny, uf=uf, seed=int(rng.integers(0, 2**63))))
        for _ in range(n)
    ]


def zero_filled_psnr(frames, masks):
    """Mean zero-filled PSNR of complex frames under the given masks."""
    scores = []
    for frame, mask in zip(frames, masks):
        zf = zero_filled(undersample(frame[None], mask.lines), mask.lines)
        scores.append(psnr(np.abs(zf[0]), np.abs(frame)))
    return float(np.mean(scores))


@pytest.fixture(scope="session")
def toy_dataset():
    protocol = default_protocol(n_directions=6, averages=1)
    return make_dataset((20, 4, 2), protocol=protocol, seed=11)


@pytest.fixture(scope="session")
def toy_train_config():
    return TrainConfig(
        epochs=30,
        split_epoch=15,
        uf_range=(1.0, 12.0),
        fine_tune_uf=TOY_UF,
        batch_size=4,
        base_lr=1e-3,
        lr_decay=0.1,
        lr_period=20,
        seed=5,
    )


def _run_training(dataset, config, stochastic):
    model = CascadeModel.build(
        CascadeConfig(n_c=3, hidden_channels=16, stochastic=stochastic), seed=1
    )
    t0 = time.perf_counter()
    model, log = train(model, Dataset(dataset.train, dataset.val, []), config)
    return {"model": model, "log": log, "wall": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def toy_deterministic(toy_dataset, toy_train_config):
    return _run_training(toy_dataset, toy_train_config, stochastic=False)


@pytest.fixture(scope="session")
def toy_stochastic(toy_dataset, toy_train_config):
    import dataclasses

    config = dataclasses.replace(toy_train_config, stochastic=True)
    return _run_training(toy_dataset, config, stochastic=True)
