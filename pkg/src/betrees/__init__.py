"""Bayesian ensemble trees: an infinite Dirichlet-process mixture of
Bayesian CART trees fitted by blocked Gibbs sampling, with cluster-specific
and ensemble predictors and probabilistic variable ranking."""

__version__ = "0.1.0"

from .dataset import (CATEGORICAL, CONTINUOUS, Dataset, SimSpec,
                      generate_heterogeneous_regression, generate_simulation,
                      load_csv, split_train_test)
from .inference import (ChainConfig, ChainResult, EnsembleSnapshot,
                        classify, evaluate, predict_cluster_specific,
                        predict_ensemble, run_chain, select_best,
                        variable_ranking)
from .tree import Tree

__all__ = [
    "CATEGORICAL", "CONTINUOUS", "ChainConfig", "ChainResult", "Dataset",
    "EnsembleSnapshot", "SimSpec", "Tree", "classify", "evaluate",
    "generate_heterogeneous_regression", "generate_simulation", "load_csv",
    "predict_cluster_specific", "predict_ensemble", "run_chain",
    "select_best", "split_train_test", "variable_ranking",
]
