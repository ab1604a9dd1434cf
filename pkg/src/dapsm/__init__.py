"""Distance-adjusted propensity score matching and a spatial-confounding simulation harness."""

from .balance import BalanceReport, asdm, balance_report
from .comparators import (ComparatorSpec, distance_caliper_match, gold_outcome_estimate,
                          gold_ps_match, naive_coords_match, naive_match)
from .daps import (DapsConfig, DapsMatrix, MatchedSet, WSelection, apply_caliper, compute_daps,
                   dapsm, greedy_match, optimal_match, select_w_bisection, select_w_grid)
from .data import Dataset, read_csv, write_csv
from .estimation import EffectEstimate, att_diff_means, att_linear_adjusted
from .geometry import pairwise_distances, standardize_ecdf, standardize_minmax
from .propensity import augment_with_coordinates, fit_logistic, make_design, predict_ps
from .simulation import (MaternParams, SimulationConfig, generate_dataset, matern_correlation,
                         run_monte_carlo, sample_gp)

__version__ = "0.1.0"
