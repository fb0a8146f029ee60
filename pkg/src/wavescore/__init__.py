"""Wavelet conditional score models: Haar pyramids, bias-free CNN denoisers,
score-ascent sampling and exact Gaussian oracles."""
from .errors import (CheckpointVersionError, ConfigError, DimensionError, GraphError,
                     IntegrityError, InvariantViolation, NonConvergenceError, NumericError,
                     SingularModelError, UnsupportedModelError, WavescoreError)
from .kernels import BACKEND
from .models import (Model, NetworkSpec, build_conditional_denoiser, build_lowpass_denoiser,
                     build_pixel_denoiser, jacobian_row, kernel_pattern, receptive_field)
from .pipeline import mse_decomposition_check, multiscale_denoise, psnr, psnr_curve
from .sampler import (SamplerConfig, sample_score_ascent, superres_pixel_constrained,
                      synthesize_cascade)
from .training import TrainConfig, load_checkpoint, load_model, save_checkpoint, train_denoiser
from .wavelet import (WaveletPyramid, build_pyramid, collapse_pyramid, haar_analysis_step,
                      haar_synthesis_step)

__version__ = "0.1.0"
