"""Column generation for sparse tensor and mixture models.

Two loss families share one outer loop: an L2 + L1 fit of a tensor by
signed rank-1 atoms, and a cross-entropy + L1 fit of a probability tensor
(or weighted points) by nonnegative rank-1 or Gaussian atoms.
"""

from .driver import (
    CERTIFIED,
    ITERATION_CAP,
    TIME_LIMIT,
    ColgenConfig,
    ColgenResult,
    TraceEvent,
    gt_basis_derivative,
    posthoc_best_score,
    run_colgen_ce,
    run_colgen_l2,
)
from .errors import (
    ColgenError,
    DegenerateDualError,
    DimensionError,
    DomainError,
    FormatError,
    ParameterError,
    UsageError,
    ValidationError,
)
from .master_ce import CutSet, MasterCEConfig, solve_master_ce
from .master_l2 import MasterL2Config, solve_master_l2
from .pricing import PricingConfig
from .tensor import Atom, AtomKind, DenseTensor3, PointSet, atom_densify, score
from .workingset import WorkingSet

__version__ = "0.1.0"
