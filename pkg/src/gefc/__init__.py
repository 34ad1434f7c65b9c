"""Generative forests: random forests lifted to joint densities.

Train a forest, view it as a mixture of tree-shaped probabilistic
circuits, then classify through the joint, monitor p(x) for
out-of-distribution inputs, and certify per-prediction robustness against
epsilon-contaminated parameters.
"""

from .dataset import (DataTable, DatasetError, Schema, bootstrap_sample,
                      load_csv, train_test_split)
from .forest import (RandomForest, best_split, fit_forest, fit_tree,
                     gini_impurity, predict_forest, predict_tree)
from .circuit import (GeDT, GeFPlus, LeafConfig, LeafDensity, SumNode,
                      build_gef_plus, convert_forest, convert_tree,
                      fit_leaf_density, log_joint, log_marginal, posterior,
                      predict)
from .robustness import (ContaminationSpec, RobustnessResult, credal_max_diff,
                         is_robust_at, leaf_diff_bounds, robustness_epsilon)
from .evaluation import (KdeModel, ScoreSeries, confidence_scores, kde_fit,
                         kde_log_pdf, outlier_scores, rank_extremes,
                         robustness_accuracy_curves, roc_auc)
from .model_io import TrainedModel, load_model, save_model

__version__ = "0.1.0"
