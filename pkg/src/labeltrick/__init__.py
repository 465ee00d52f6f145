"""Label propagation, the label trick, and its deterministic equivalents."""
from .errors import DenseModeRequired, EnumerationTooLarge, NumericalIntegrityError
from .graph import Graph, SparseMatrix, build_laplacian, build_normalized_adjacency, spmm
from .propagation import (PropagationOperator, closed_form_operator, explicit_operator, gamma_matrix,
                          series_operator)
from .splits import (LabelMatrix, SplitMask, enumerate_splits, masked_labels, one_vs_all_splits,
                     sample_split)
from .predictors import (ModelWeights, composite_predict, cs_trainable_predict, cs_vanilla_predict,
                         feat_label_predict, lp_predict, nonlinear_toy_predict, self_excluded_predict,
                         stochastic_predict)
from .objectives import (ObjectiveReport, ce_jensen_gap, cross_entropy, mse_deterministic_rhs,
                         mse_stochastic_lhs, thm3_scaled_loss)
from .training import (FitResult, TrainConfig, fit_linear_model, fit_trainable_cs, fit_trainable_lp,
                       solve_ridge)
from .data_io import Dataset, load_edge_list, load_table, make_sbm, write_metrics_csv

__version__ = "0.1.0"
