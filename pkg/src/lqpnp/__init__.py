"""Plug-and-play image restoration with lq-norm fidelity (0 < q <= 2).

Solves MAP restoration problems min (1/lambda)||Ax - y||_q^q + prior via a
reweighted-least-squares outer loop whose inner proximal step is any
schedule-aware denoiser -- an analytic Gaussian-mixture denoiser in-process,
or an external model server over the LQDN v1 wire protocol.
"""

__version__ = "0.1.0"

from .denoisers import (Denoiser, ExternalDenoiserEndpoint, GmmPrior,
                        external_denoiser, gmm_denoiser, gmm_marginal_score,
                        median_denoiser, renoise, tv_denoiser,
                        tweedie_from_noise_pred, two_level_prior)
from .errors import (ArgumentError, DecodeError, DimensionError, NumericError,
                     TransportError)
from .guidance import GuidanceConfig, ddpm_posterior_step, dps_sample
from .image import (Image, as_vector, constant_image, from_vector, load_image,
                    save_image)
from .metrics import MetricReport, evaluate, psnr, ssim
from .noise import (GgsmParams, LaplaceParams, NoiseFitReport, SaltPepperSpec,
                    apply_salt_pepper, fit_ggsm, fit_laplace, fit_noise,
                    ggsm_log_likelihood, ggsm_pdf, lambda_of,
                    mle_delta_given_q, sample_ggsm)
from .operators import (InpaintMask, LinearOperator, adjoint_dot_test,
                        avgpool_sr_op, blur_op, gaussian_kernel, identity_op,
                        inpaint_op, load_mask, make_mask, save_mask)
from .schedule import (DiffusionSchedule, PerturbationSchedule, epsilon_at,
                       eta, linear_beta_schedule, subsample_timesteps)
from .solver import (RestoreConfig, RestoreTrace, WeightVector, fbs_inner,
                     gradient_step, irls_lq_regression, irls_weights,
                     lq_fidelity, majorizer_value, prox_data_step, restore)
