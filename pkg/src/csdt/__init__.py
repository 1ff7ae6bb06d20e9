"""Compressive-sensing MRI reconstruction with cascaded CNNs and
stochastic subnetwork dropping, plus a cardiac diffusion-tensor
evaluation pipeline on synthetic phantoms.
"""

from .autodiff import Tensor, no_grad, conv2d, leaky_relu, batch_norm, mse_loss
from .cascade import (
    CascadeConfig,
    CascadeModel,
    EnsembleResult,
    drop_probability,
    load_model,
    receptive_field,
    reconstruct_ensemble,
    save_model,
)
from .container import read_container, write_container, write_pgm
from .dtfit import (
    DiffusionTensorField,
    TensorMetrics,
    design_matrix,
    eig_sym3,
    fa,
    fit_tensor,
    helix_angle,
    helix_angle_map,
    md,
    tensor_metrics,
)
from .kspace import (
    apply_mask,
    data_consistency,
    dc_layer,
    fft2c,
    ifft2c,
    magnitude,
    to_channels,
    to_complex,
    undersample,
    zero_filled,
)
from .masks import MaskSpec, SamplingMask, generate_mask, load_mask, save_mask
from .metrics import EvalReport, ha_rmse, psnr, rmse_masked
from .optim import Adam, NonFiniteGradientError
from .phantom import (
    Dataset,
    DiffusionProtocol,
    DWIStack,
    PhantomRanges,
    PhantomSpec,
    default_protocol,
    load_dwi,
    make_dataset,
    make_tensor_field,
    save_dwi,
    simulate_dwi,
)
from .training import NonFiniteLossError, TrainConfig, TrainLog, train, validate

__version__ = "0.1.0"
