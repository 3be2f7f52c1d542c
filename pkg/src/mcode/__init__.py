"""Monte Carlo ODE solutions from random coding trees."""

from .butcher import (
    ButcherTree,
    bin_to_butcher,
    butcher_partial_sum,
    butcher_to_bin,
    coefficients,
    coding_shapes,
    elementary_differential,
    enumerate_butcher_trees,
    shape_conditioned_estimate,
)
from .codes import Branch, Code, CodeCache, MechanismTable, autonomize, code_value, initial_bound_K, reduce_higher_order
from .densities import LifetimeDensity
from .estimator import (
    ClipPolicy,
    Estimate,
    NoUsableSamples,
    RunningStats,
    Trajectory,
    ValidityReport,
    estimate_at,
    mean_tree_size,
    patch_solve,
    validity_report,
)
from .expr import Expr, RhsSystem, SingularEvaluation, differentiate, evaluate, parse
from .problems import PROBLEMS, builtin_problem, rk_oracle
from .sampling import SampleOptions, ShapeSignature, TreeSample, sample_tree

__version__ = "0.1.0"
