"""Convolutional sparse coding and online convolutional dictionary learning.

The package solves the single-image convolutional sparse approximation
problem by frequency-domain ADMM and learns dictionaries online with two
memory-light methods whose cross-sample state is linear in the number of
filters times the lattice size.  Includes image preprocessing, bit-exact
checkpointing, metrics, and slow reference oracles for the test suite.
"""

from ocdl.alg1 import Alg1State, train as train_alg1
from ocdl.alg2 import Alg2State, train as train_alg2
from ocdl.csc import (
    AdmmSettings,
    AdmmStatus,
    csc_objective,
    csc_solve,
    lambda_max,
    soft_threshold,
)
from ocdl.dict_space import (
    EvalReport,
    FilterBank,
    evaluate,
    init_dictionary,
    project_bank,
    project_filter,
)
from ocdl.history import HistoryPair, zero_history

__version__ = "0.1.0"

__all__ = [
    "AdmmSettings",
    "AdmmStatus",
    "Alg1State",
    "Alg2State",
    "EvalReport",
    "FilterBank",
    "HistoryPair",
    "csc_objective",
    "csc_solve",
    "evaluate",
    "init_dictionary",
    "lambda_max",
    "project_bank",
    "project_filter",
    "soft_threshold",
    "train_alg1",
    "train_alg2",
    "zero_history",
    "__version__",
]
