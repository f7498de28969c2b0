"""islkit: rank-statistic training of implicit generative models.

The library trains MLP generators by pushing the empirical rank histogram
of real observations among generated samples toward uniformity, with a
differentiable surrogate.  Heavy-tailed targets are handled through
generalized-Pareto latent noise, multivariate targets through random 1D
projections.
"""

from .diff_engine import (
    AdamState,
    Checkpoint,
    GeneratorSpec,
    adam_init,
    adam_step,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)
from .distributions import (
    MIXTURE_PRESETS,
    NoiseSpec,
    TargetSpec,
    gpd_ccdf,
    gpd_inverse_cdf,
    noise_cdf,
    sample_noise,
    sample_target,
    sample_unit_sphere,
    target_cdf,
    target_quantile,
)
from .isl_loss import (
    AffineTransform,
    IslHyperparams,
    fit_robust_transform,
    isl_loss_and_gradient,
    isl_surrogate_loss,
    marginal_isl_loss,
    rbf_soft_histogram,
    sliced_isl_loss,
    soft_rank,
    soft_ranks,
)
from .metrics import (
    ModeCoverage,
    ModeLayout,
    accdf_area,
    js_histogram,
    kl_histogram,
    ks_distance,
    mae_mse_vs_optimal,
    mode_coverage,
    mode_layout_for,
    optimal_map,
)
from .rank_stats import (
    Chi2Result,
    RankHistogram,
    chi2_uniformity,
    empirical_dk,
    hard_rank,
    hard_ranks,
    histogram_from_ranks,
    rank_histogram,
)
from .rng import RandomSource
from .training import (
    TrainConfig,
    TrainReport,
    TrainResult,
    TrainingError,
    default_k_schedule,
    hill_estimator,
    pareto_isl_setup,
    train_isl_1d,
    train_isl_sliced,
)

__version__ = "0.1.0"
