"""Consistency analysis of interval-constrained quadratic models.

A dataset couples box (and facet) prior bounds on parameters with interval
constraints on quadratic models.  This package measures whether the pieces
can all hold at once, and when they cannot, finds cheap repairs:

* scalar consistency: the largest uniform normalized tightening of all
  intervals that stays feasible, bracketed by a local search and a
  certified conic upper bound, with dual sensitivities per bound;
* vector consistency: the minimal weighted sum of per-bound relaxations
  restoring feasibility, bracketed by a local search and a certified conic
  lower bound;
* LP error-recovery trials and two-bound trade-off scans built on top.
"""

from ._assembly import SdpOptions
from .conic import (ConicProblem, ConicSolution, SolverError, SolverOptions,
                    dump_problem, solve_lp, solve_sdp)
from .dataset import (Dataset, ParameterBox, PerturbationVector, QoiConstraint,
                      QuadraticModel, RelaxationScheme, ValidationReport,
                      build_scheme, evaluate_quadratic, load_dataset,
                      normalized_slack, save_dataset, validate_dataset)
from .linear import (LinearVcmResult, RatioPair, TrialConfig, TrialInstance,
                     TrialStatistics, counterexample_instance, feasible_system,
                     linear_vcm, make_trial, phi_ratios, run_trials)
from .scalar import (RemovalTrace, ScmResult, SearchOptions, SensitivityReport,
                     iterative_scm, scm, scm_local, scm_perturbed, scm_sdp_upper,
                     sensitivities)
from .tradeoff import BoundRef, TradeoffPoint, TradeoffScan, tradeoff_scan
from .vector import (NullInfeasibleError, RelaxedDataset, StructureReport,
                     SupportResult, VcmResult, apply_relaxations, check_structure,
                     vcm, vcm_exact_support, vcm_local, vcm_sdp_lower)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
