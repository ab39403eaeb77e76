"""Conformal prediction intervals, algorithmic stability estimates and
training-conditional coverage bounds."""

from .core import (
    INF,
    Dataset,
    Interval,
    Predictor,
    RegressionAlgorithm,
    RngStream,
    conformal_quantile,
    conformal_rank,
    derive_stream,
    run_trials,
)
from .regressors import (
    ClippedRegressor,
    ConstantRegressor,
    KNNRegressor,
    MeanRegressor,
    RidgeRegressor,
    SubbagRegressor,
    TreeRegressor,
    make_algorithm,
)
from .conformal import (
    GridSpec,
    PredictionSet,
    fit_jackknife_plus,
    fit_split_conformal,
    full_conformal,
    jackknife_plus,
    split_conformal,
)
from .distributions import BoundedUniform, LinearGaussian, SineMixture, make_distribution
from .stability import (
    IN,
    IN_SWAP,
    OUT,
    OUT_SWAP,
    StabilityCurve,
    StabilityEstimate,
    StabilityVariant,
    bagging_stability_bound,
    estimate_stability,
    estimate_tail_stability,
    knn_stability_bound,
    lemma_bound,
    ridge_stability_bound,
    stability_curve,
)
from .guarantees import (
    BoundInputs,
    BoundReport,
    asymptotic_schedule,
    bound_alternative,
    bound_full_conformal,
    bound_jplus_inflated,
    bound_jplus_uninflated,
    bound_split_conformal,
    evaluate_bound,
)
from .experiments import ExperimentConfig, miscoverage_distribution, run_figure1

__version__ = "0.1.0"
