"""CP tensor factor models for high-dimensional time series."""

from .covariance import CovarianceBundle, TensorSeries, contemporary_cov, lag_cov, mode_cov
from .exceptions import (
    CpFactorError,
    DataError,
    DegeneracyError,
    EstimationError,
    RankDeficientError,
    SurvivorShortfallError,
)
from .inference import (
    CiReport,
    NoiseCov,
    angle_mixture_weights,
    clt_statistic,
    estimate_theta,
    forecast_y,
    holdout_mse,
    loading_ci,
    residuals,
    sigma_u,
    threshold_cov,
    var1_forecast,
)
from .initialization import (
    InitConfig,
    LoadingSet,
    composite_pca,
    composite_pca_one,
    eigengap_regime,
    randomized_projection,
    rc_pca,
)
from .io import load_model, read_series, save_model, write_series
from .iso import CpModel, IsoConfig, extract_factors, iso_fit, project_z, r_squared, reconstruct
from .rank import RankEstimate, rank_ip, rank_uer
from .simlab import (
    DgpSpec,
    GroundTruth,
    McSummary,
    brute_force_cp,
    factor_mse,
    gen_dataset,
    gen_errors,
    gen_factors,
    gen_loadings,
    match_factors,
    matched_angle_errors,
    rc_pca_with_retry,
    run_config,
    sin_angle_error,
    true_model,
    write_long_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
