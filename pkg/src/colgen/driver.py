"""Column-generation outer loops for both loss families.

Each round solves the restricted master, prices the dual, and adds every
candidate whose re-verified score beats the threshold by ``eps_viol``.  The
L2 loop stops once no atom beats ``reg``; the cross-entropy loop stops once a
round adds neither atoms nor cuts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ParameterError, UsageError
from .master_ce import (
    EPS_MIX,
    CutSet,
    MasterCEConfig,
    MasterSolutionCE,
    relaxed_objective_ce,
    solve_master_ce,
)
from .master_l2 import MasterL2Config, MasterSolutionL2, solve_master_l2
from .pricing import (
    PricingConfig,
    price_gmm,
    price_nonsym_ce,
    price_nonsym_l2,
    price_sym_ce,
    price_sym_l2,
    price_sym_l2_pg,
)
from .tensor import Atom, DenseTensor3, PointSet, score
from .workingset import WorkingSet

CERTIFIED = "certified"
ITERATION_CAP = "iteration_cap"
TIME_LIMIT = "time_limit"


@dataclass(frozen=True)
class ColgenConfig:
    """Outer-loop settings.

    ``reg`` is the per-atom L1 cost (``ell`` for the L2 family, ``ell_a`` for
    cross entropy).  ``oracle`` selects ``"power"`` or ``"pg"`` for symmetric
    L2 pricing.  ``timing=False`` writes 0 for elapsed seconds in the trace
    (the time limit is still enforced) so that traces are reproducible.
    """

    family: str = "one"
    reg: float = 0.1
    eps_viol: float = 1e-7
    max_iters: int = 500
    time_limit_s: float = 300.0
    pricing: PricingConfig = field(default_factory=PricingConfig)
    max_add: int | None = None
    nonsym: bool = False
    oracle: str = "power"
    sigma: float | None = None
    master_l2: MasterL2Config = field(default_factory=MasterL2Config)
    master_ce: MasterCEConfig = field(default_factory=MasterCEConfig)
    max_cuts: int | None = None
    prune_zero: bool = False
    timing: bool = True

    def __post_init__(self):
        if self.family not in ("one", "two"):
            raise ParameterError(f"family must be 'one' or 'two', got {self.family!r}")
        if not (self.reg >= 0 and np.isfinite(self.reg)):
            raise ParameterError(f"regularization must be finite and >= 0, got {self.reg}")
        if not self.eps_viol > 0:
            raise ParameterError("eps_viol must be positive")
        if self.max_iters < 0 or not self.time_limit_s > 0:
            raise ParameterError("iteration and time limits must be positive")
        if self.max_add is not None and self.max_add < 1:
            raise ParameterError("max_add must be >= 1")
        if self.oracle not in ("power", "pg"):
            raise ParameterError(f"unknown oracle {self.oracle!r}")


@dataclass
class TraceEvent:
    iteration: int
    elapsed_s: float
    objective: float
    ws_size: int
    active: int
    best_score: float
    threshold: float
    cuts_added: int
    terminated: str = ""
    master_converged: bool = True
    relaxed_objective: float | None = None


@dataclass
class ColgenResult:
    solution: MasterSolutionL2 | MasterSolutionCE
    working_set: WorkingSet
    trace: list[TraceEvent]
    termination: str
    cuts: CutSet | None = None

    @property
    def certified(self) -> bool:
        return self.termination == CERTIFIED

    @property
    def certificate(self) -> dict:
        last = self.trace[-1]
        return {"best_score": last.best_score, "threshold": last.threshold}


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def stamp(self) -> float:
        return self.elapsed() if self.enabled else 0.0


def _verified(candidates, theta, points=None):
    """Rescore every candidate independently of the oracle."""
    return [(atom, score(theta, atom, points)) for atom, _ in candidates]


def _select(scored, threshold, cfg: ColgenConfig):
    picked = [a for a, s in sorted(scored, key=lambda p: -p[1]) if s > threshold + cfg.eps_viol]
    if cfg.max_add is not None:
        picked = picked[: cfg.max_add]
    return [a.with_reg_cost(cfg.reg) for a in picked]


def _prune(ws: WorkingSet, w: np.ndarray, keep_baseline: bool):
    keep = w > 0
    if keep_baseline and ws.baseline_index is not None:
        keep[ws.baseline_index] = True
    return ws.subset(keep), w[keep]


def run_colgen_l2(
    T: DenseTensor3,
    config: ColgenConfig | None = None,
    warm_set=(),
    callback: Callable | None = None,
) -> ColgenResult:
    """Column generation for ``min_{w>=0} 1/2 ||T - M w||^2 + reg * sum(w)``.

    Parameters
    ----------
    T : DenseTensor3
        Target tensor; must be flagged symmetric unless ``config.nonsym``.
    config : ColgenConfig, optional
    warm_set : iterable of Atom
        Initial working set (empty by default).
    callback : callable, optional
        Called as ``callback(event, solution, working_set)`` after every round.
    """
    cfg = config or ColgenConfig(family="one")
    if not cfg.nonsym and not T.symmetric:
        raise UsageError("symmetric pricing needs a tensor flagged symmetric (or use nonsym)")
    if cfg.nonsym:
        oracle = price_nonsym_l2
    else:
        oracle = price_sym_l2 if cfg.oracle == "power" else price_sym_l2_pg
    clock = _Clock(cfg.timing)
    ws = WorkingSet(T.dims, [a.with_reg_cost(cfg.reg) for a in warm_set])
    w = None
    trace: list[TraceEvent] = []
    it = 0
    while True:
        sol = solve_master_l2(T, ws, cfg.master_l2, w0=w)
        theta = sol.theta.reshape(T.dims)
        scored = _verified(oracle(theta, cfg.pricing, round_index=it), theta)
        best = max((s for _, s in scored), default=0.0)
        new = _select(scored, cfg.reg, cfg)
        reason = ""
        if not new:
            reason = CERTIFIED
        elif it >= cfg.max_iters:
            reason = ITERATION_CAP
        elif clock.elapsed() > cfg.time_limit_s:
            reason = TIME_LIMIT
        event = TraceEvent(
            iteration=it,
            elapsed_s=clock.stamp(),
            objective=sol.objective,
            ws_size=len(ws),
            active=int(np.count_nonzero(sol.weights)),
            best_score=best,
            threshold=cfg.reg,
            cuts_added=0,
            terminated=reason,
            master_converged=sol.converged,
        )
        trace.append(event)
        if callback is not None:
            callback(event, sol, ws)
        if reason:
            return ColgenResult(sol, ws, trace, reason)
        w = sol.weights
        if cfg.prune_zero:
            ws, w = _prune(ws, w, keep_baseline=False)
        for atom in new:
            ws.add(atom)
        it += 1


def _ce_oracle(cfg: ColgenConfig, target):
    if isinstance(target, PointSet):
        if cfg.sigma is None or not cfg.sigma > 0:
            raise ParameterError("gaussian pricing needs sigma > 0")
        return lambda theta, pc, round_index: price_gmm(theta, target, cfg.sigma, pc, round_index)
    if cfg.nonsym:
        return price_nonsym_ce
    if not target.symmetric:
        raise UsageError("symmetric pricing needs a tensor flagged symmetric (or use nonsym)")
    return price_sym_ce


def ce_target(target) -> np.ndarray:
    """Target distribution as a flat vector (point weights are normalized)."""
    if isinstance(target, PointSet):
        total = target.weights.sum()
        if not total > 0:
            raise UsageError("point weights sum to zero")
        return target.weights / total
    return target.data


def run_colgen_ce(
    T,
    config: ColgenConfig | None = None,
    callback: Callable | None = None,
) -> ColgenResult:
    """Column generation for the simplex-constrained cross-entropy master.

    ``T`` is a probability tensor (:class:`DenseTensor3`) or a
    :class:`PointSet` whose normalized weights form the target; the latter
    prices fixed-width Gaussian atoms with ``config.sigma``.
    """
    cfg = config or ColgenConfig(family="two")
    oracle = _ce_oracle(cfg, T)
    points = T if isinstance(T, PointSet) else None
    t = ce_target(T)
    context = points if points is not None else T.dims
    upper = np.inf if points is not None else 1.0
    clock = _Clock(cfg.timing)
    ws = WorkingSet(context, [Atom.baseline()])
    cuts = CutSet.initial(t.size, upper=upper, max_cuts=cfg.max_cuts)
    w = None
    trace: list[TraceEvent] = []
    it = 0
    while True:
        sol = solve_master_ce(t, ws, cfg.master_ce, w0=w)
        point = np.clip(sol.mixture, EPS_MIX, upper)
        added_cuts = cuts.update(point)
        relaxed = relaxed_objective_ce(t, sol.weights, ws, cuts)
        theta = sol.theta if points is not None else sol.theta.reshape(T.dims)
        scored = _verified(oracle(theta, cfg.pricing, round_index=it), theta, points)
        best = max((s for _, s in scored), default=0.0)
        threshold = cfg.reg + sol.alpha
        new = _select(scored, threshold, cfg)
        reason = ""
        if not new and added_cuts == 0:
            reason = CERTIFIED
        elif it >= cfg.max_iters:
            reason = ITERATION_CAP
        elif clock.elapsed() > cfg.time_limit_s:
            reason = TIME_LIMIT
        event = TraceEvent(
            iteration=it,
            elapsed_s=clock.stamp(),
            objective=sol.objective,
            ws_size=len(ws),
            active=int(np.count_nonzero(sol.weights)),
            best_score=best,
            threshold=threshold,
            cuts_added=added_cuts,
            terminated=reason,
            master_converged=sol.converged,
            relaxed_objective=relaxed,
        )
        trace.append(event)
        if callback is not None:
            callback(event, sol, ws)
        if reason:
            return ColgenResult(sol, ws, trace, reason, cuts)
        w = sol.weights
        if cfg.prune_zero:
            ws, w = _prune(ws, w, keep_baseline=True)
        for atom in new:
            ws.add(atom)
        it += 1


def gt_basis_derivative(sol, ground_truth_atoms, reg: float, points: PointSet | None = None) -> np.ndarray:
    """Reduced score of each ground-truth atom at the final duals.

    ``score(theta, m) - reg`` for the L2 family and
    ``score(theta, m) - reg - alpha`` for cross entropy.  Positive values mean
    the atom would still improve the objective.
    """
    offset = reg + (sol.alpha if isinstance(sol, MasterSolutionCE) else 0.0)
    return np.array([score(sol.theta, m, points) - offset for m in ground_truth_atoms])


def posthoc_best_score(result: ColgenResult, config: ColgenConfig, restarts: int = 20, seed: int = 10_007, points=None):
    """Largest score found by a fresh pricing pass with independent seeds.

    A certified run should leave nothing above its final threshold.
    """
    sol = result.solution
    pc = replace(config.pricing, restarts=restarts, seed=seed)
    theta = sol.theta
    if points is None:
        theta = theta.reshape(result.working_set.context)
    if config.family == "one":
        if config.nonsym:
            cands = price_nonsym_l2(theta, pc)
        else:
            cands = (price_sym_l2 if config.oracle == "power" else price_sym_l2_pg)(theta, pc)
    elif points is not None:
        cands = price_gmm(theta, points, config.sigma, pc)
    else:
        cands = (price_nonsym_ce if config.nonsym else price_sym_ce)(theta, pc)
    return max((score(theta, a, points) for a, _ in cands), default=0.0)


def final_threshold(result: ColgenResult, config: ColgenConfig) -> float:
    sol = result.solution
    return config.reg + (sol.alpha if isinstance(sol, MasterSolutionCE) else 0.0)


def active_atoms(result: ColgenResult):
    """``(atom, weight)`` for atoms with positive weight, baseline included."""
    return [(a, float(x)) for a, x in zip(result.working_set, result.solution.weights) if x > 0]


__all__ = [
    "CERTIFIED",
    "ITERATION_CAP",
    "TIME_LIMIT",
    "ColgenConfig",
    "ColgenResult",
    "TraceEvent",
    "active_atoms",
    "final_threshold",
    "gt_basis_derivative",
    "posthoc_best_score",
    "run_colgen_ce",
    "run_colgen_l2",
]
