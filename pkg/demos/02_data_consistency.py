"""
The closed-form data-consistency step
=====================================

A denoiser's output is only an estimate; wherever k-space was actually
measured we can trust the scanner more than the network. The data
consistency step blends the estimate's k-space with the measurements on
the sampled lines:

    lambda0 = 0      keep the estimate (no trust in the data)
    lambda0 -> inf   replace with the measurements exactly ("hard")
    in between       weighted average (y + lambda0*y) / (1 + lambda0)

Here the "estimate" is the ground truth plus noise, so more trust in the
measurements must reduce the error on the sampled lines.
"""

import numpy as np

from csdt.kspace import data_consistency, fft2c, undersample, zero_filled
from csdt.masks import MaskSpec, generate_mask

rng = np.random.default_rng(0)

truth = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
mask = generate_mask(MaskSpec(ny=32, uf=3.0, seed=1))
y = undersample(truth[None], mask.lines)

# noisy estimate of the image
z = truth[None] + 0.3 * (rng.standard_normal((1, 32, 32))
                         + 1j * rng.standard_normal((1, 32, 32)))

print("lambda0   k-space error on sampled lines")
for lam in (0.0, 1.0, 10.0, 100.0, "hard"):
    out = data_consistency(z, y, mask.lines, lam)
    k = fft2c(out)
    err = np.abs(k[:, mask.lines] - y[:, mask.lines]).max()
    print(f"{str(lam):>7}   {err:.3e}")

# hard DC is idempotent: applying it twice changes nothing
once = data_consistency(z, y, mask.lines, "hard")
twice = data_consistency(once, y, mask.lines, "hard")
print(f"\nidempotence |DC(DC(z)) - DC(z)| = {np.abs(twice - once).max():.3e}")

# and starting from zero it reproduces the zero-filled reconstruction
from_zero = data_consistency(np.zeros_like(z), y, mask.lines, "hard")
zf = zero_filled(y, mask.lines)
print(f"DC(0) vs zero-filled       = {np.abs(from_zero - zf).max():.3e}")
