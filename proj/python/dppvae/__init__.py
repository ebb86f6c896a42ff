"""VAE with a diversity-encouraging determinantal prior - python surface."""

from dppvae._core import (  # noqa: F401
    Checkpoint,
    KernelParams,
    Likelihood,
    LogitModel,
    PCAModel,
    PriorKind,
    Spectrum,
    VAEModel,
    __version__,
    cholesky,
    continuous_spectrum,
    dpp_log_prior_grad,
    dpp_log_prior_value,
    eigh,
    evaluate,
    fit_logit,
    grad_check_logdet,
    kernel_matrix,
    load_checkpoint,
    load_idx,
    log_det_spd,
    log_esp,
    log_normalizer_upper,
    make_blobs,
    make_vae,
    normalizer_bounds,
    pca_fit,
    quality,
    similarity,
    train,
    truncate_spectrum,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
