"""Debiased recommendation learning under selection bias and neighborhood
interference: kernel-smoothed loss estimators, joint-treatment propensities,
joint-learning trainers, a semi-synthetic experiment pipeline and a
Monte-Carlo harness for the estimators' bias/variance theory."""

from .data import Dataset, ObservationMask, RatingMatrix, binarize, load_tsv, split
from .estimators import (EstimateReport, LossSpec, ideal_loss, ideal_loss_n,
                         ips_loss, n_dr_loss, n_ips_loss, naive_loss)
from .kernels import KernelSpec, exact_match, kernel_eval, kernel_weight
from .learning import (FactorModel, ImputationModel, TrainConfig, TrainData,
                       train_baseline, train_n_dr_jl, train_n_ips,
                       train_n_mrdr_jl)
from .neighborhood import (NeighborhoodSpec, RepDistribution, TreatmentRep,
                           compute_rep, median_threshold, neighbors,
                           uniform_binary)
from .propensity import (DensityRatioModel, PropensityField, fit_density_ratio,
                         fit_logistic, fit_naive_bayes)
from .synth import SemiSynthConfig, SemiSynthWorld, build_world, \
    make_prediction_matrix
from .evaluation import (GenerativeSpec, SweepReport, auc, ndcg_at_k,
                         optimal_bandwidth, relative_error,
                         verify_bias_variance)

__version__ = "0.1.0"
