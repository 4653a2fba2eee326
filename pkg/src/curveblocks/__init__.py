"""Co-clustering of time-dependent curve grids into blocks of homogeneous curves.

Rows (subjects) and columns (variables) of an n x d grid of time series are
partitioned simultaneously; within a block every curve is an amplitude /
scale / phase transformation of a common spline shape. Estimation runs a
marginalized stochastic EM with Gibbs sampling; model dimensions are chosen
by a penalized complete-data log-likelihood score.
"""

__version__ = "0.1.0"

from .data import CellCurve, CurveGrid, load_csv, preprocess, save_csv
from .datagen import ScenarioSpec, default_layout, generate, shape_function
from .errors import (
    ConfigError,
    CurveblocksError,
    DataError,
    DomainError,
    NumericError,
    ShapeError,
)
from .lbm import CoPartition, col_conditionals, complete_loglik, row_conditionals
from .metrics import ari, cari
from .msem import FitResult, MsemConfig, Theta, initialize, m_step, marginalization_step, run, se_step
from .nlme_fit import BlockData, FitDiagnostics, fit_block, init_block
from .selection import (
    ModelGrid,
    ScoredModel,
    SearchResult,
    block_param_count,
    icl,
    icl_from_loglik,
    model_search,
    score_fit,
)
from .sim_model import (
    BlockParams,
    RandomEffectConfig,
    conditional_loglik,
    conditional_mean,
    marginal_loglik_mc,
    sample_cell,
)
from .splines import BasisMatrix, SplineSpec, eval_shape, make_basis, shifted_basis

__all__ = [
    "BasisMatrix",
    "BlockData",
    "BlockParams",
    "CellCurve",
    "ConfigError",
    "CoPartition",
    "CurveblocksError",
    "CurveGrid",
    "DataError",
    "DomainError",
    "FitDiagnostics",
    "FitResult",
    "ModelGrid",
    "MsemConfig",
    "NumericError",
    "RandomEffectConfig",
    "ScenarioSpec",
    "ScoredModel",
    "SearchResult",
    "ShapeError",
    "SplineSpec",
    "Theta",
    "ari",
    "block_param_count",
    "cari",
    "col_conditionals",
    "complete_loglik",
    "conditional_loglik",
    "conditional_mean",
    "default_layout",
    "eval_shape",
    "fit_block",
    "generate",
    "icl",
    "icl_from_loglik",
    "init_block",
    "initialize",
    "load_csv",
    "m_step",
    "make_basis",
    "marginal_loglik_mc",
    "marginalization_step",
    "model_search",
    "preprocess",
    "row_conditionals",
    "run",
    "sample_cell",
    "save_csv",
    "score_fit",
    "se_step",
    "shape_function",
    "shifted_basis",
]
