"""Multi-frequency k-space diffusion reconstruction for under-sampled MRI.

The pipeline samples two score-based priors in k-space, one trained on
radially weighted data and one on data with the low-frequency block masked
out, combines them, and enforces data consistency plus a low-rank Hankel
projection after every noise level.
"""

from .freqops import CenterMask, IdentityOp, WeightMatrix, apply_highpass, apply_weight, unapply_weight
from .kspace import CoilStack, Domain, fft2c, ifft2c, sos_combine
from .masks import Pattern, SamplingMask, make_mask
from .metrics import mse, psnr, ssim
from .phantom import make_phantom
from .recon import Measurement, Mode, ReconConfig, reconstruct, undersample, zero_filled
from .sampler import SamplerConfig, sample
from .score import GaussianScoreOracle, NoiseSchedule, TrainableScore, make_schedule

__version__ = "0.1.0"

__all__ = [
    "CenterMask", "CoilStack", "Domain", "GaussianScoreOracle", "IdentityOp", "Measurement", "Mode",
    "NoiseSchedule", "Pattern", "ReconConfig", "SamplerConfig", "SamplingMask", "TrainableScore",
    "WeightMatrix", "apply_highpass", "apply_weight", "fft2c", "ifft2c", "make_mask", "make_phantom",
    "make_schedule", "mse", "psnr", "reconstruct", "sample", "sos_combine", "ssim", "undersample",
    "unapply_weight", "zero_filled", "__version__",
]
