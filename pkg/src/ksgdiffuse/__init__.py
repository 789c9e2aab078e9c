"""k-space guided diffusion sampling with coarse-to-fine Monte-Carlo variance estimation."""

from ._accel import BACKEND
from .denoiser import Denoiser, GaussianPriorDenoiser, ZeroDenoiser
from .errors import (
    FormatError,
    InvalidArgumentError,
    KsgError,
    NumericalError,
    PluginError,
)
from .kspace import Mask, apply_mask, fft2c, ifft2c, make_cartesian_mask, make_gaussian_mask_1d, make_mask
from .metrics import MetricReport, psnr, ssim
from .oracle import GaussianPosterior, gaussian_posterior
from .sampler import (
    ReconResult,
    SamplerConfig,
    c2f_reconstruct,
    ksg_step,
    reverse_step,
    sample_ksg,
    sample_unconditional,
    speedup_factor,
    variance_map,
)
from .schedule import Schedule, new_cosine, new_linear, respace

__version__ = "0.1.0"
