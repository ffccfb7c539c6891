"""Restricted master for the cross-entropy + L1 family.

The master is solved directly over the simplex of working-set weights with
projected gradient.  The tangent-cut set for the log is kept alongside so the
linearized objective (a certified lower bound) can be evaluated at any time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, UsageError
from .tensor import DenseTensor3, PointSet
from .workingset import WorkingSet

EPS_MIX = 1e-12
DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class MasterCEConfig:
    tol_opt: float = 1e-8
    max_iters: int = 200_000
    armijo_step: float = 1.0
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    eps_mix: float = EPS_MIX
    newton: bool = True


@dataclass
class MasterSolutionCE:
    weights: np.ndarray
    baseline_index: int
    objective: float
    theta: np.ndarray
    alpha: float
    surrogate: np.ndarray
    mixture: np.ndarray
    opt_measure: float
    converged: bool
    iterations: int

    @property
    def baseline_weight(self) -> float:
        return float(self.weights[self.baseline_index])


def log_envelope(y: float, cuts) -> float:
    """Lower envelope ``min_eta log(eta) + (y - eta) / eta`` of the tangent lines of log."""
    cuts = np.asarray(cuts, dtype=np.float64).reshape(-1)
    if cuts.size == 0:
        raise UsageError("log envelope needs at least one cut")
    if not y > 0:
        raise DomainError(f"log envelope defined for y > 0, got {y}")
    if np.any(~(cuts > 0)):
        raise DomainError("cut points must be positive")
    return float(np.min(np.log(cuts) + (y - cuts) / cuts))


class CutSet:
    """Tangent points ``eta`` of the log linearization, one list per target index.

    Stored as a NaN-padded ``(size, capacity)`` array.  ``upper`` is the largest
    admissible cut point: 1 for distributions over tensor cells, ``inf`` for
    density-valued columns.
    """

    def __init__(self, size: int, upper: float = 1.0, max_cuts: int | None = None):
        self.size = int(size)
        self.upper = float(upper)
        self.max_cuts = max_cuts
        self._etas = np.full((self.size, 4), np.nan)
        self._counts = np.zeros(self.size, dtype=np.int64)

    @classmethod
    def initial(cls, size: int, **kwargs) -> "CutSet":
        cuts = cls(size, **kwargs)
        cuts._etas[:, 0] = 1.0 / size
        cuts._counts[:] = 1
        return cuts

    @property
    def counts(self) -> np.ndarray:
        return self._counts.copy()

    def cuts(self, x: int) -> np.ndarray:
        return self._etas[x, : self._counts[x]].copy()

    def __len__(self):
        return int(self._counts.sum())

    def update(self, mixture) -> int:
        """Add ``(x, mixture_x)`` wherever no cut lies within the dedup tolerance."""
        y = np.asarray(mixture, dtype=np.float64).reshape(-1)
        if y.size != self.size:
            raise DimensionError(f"mixture has {y.size} entries, cut set {self.size}")
        if np.any(~(y > 0)) or np.any(y > self.upper):
            raise DomainError(f"cut points must lie in (0, {self.upper}]")
        near = np.abs(self._etas - y[:, None]) <= DEDUP_TOL
        new = ~np.any(near, axis=1)
        rows = np.flatnonzero(new)
        if rows.size == 0:
            return 0
        need = int(self._counts[rows].max()) + 1
        if need > self._etas.shape[1]:
            grown = np.full((self.size, max(need, 2 * self._etas.shape[1])), np.nan)
            grown[:, : self._etas.shape[1]] = self._etas
            self._etas = grown
        self._etas[rows, self._counts[rows]] = y[rows]
        self._counts[rows] += 1
        if self.max_cuts is not None:
            for x in rows[self._counts[rows] > self.max_cuts]:
                self._drop_oldest(x, y[x])
        return int(rows.size)

    def _drop_oldest(self, x: int, tangent: float):
        row = self._etas[x, : self._counts[x]]
        for i, eta in enumerate(row):
            if abs(eta - tangent) > DEDUP_TOL:
                kept = np.delete(row, i)
                self._etas[x, :] = np.nan
                self._etas[x, : kept.size] = kept
                self._counts[x] -= 1
                return

    def envelope(self, y) -> np.ndarray:
        """Envelope value at every index, ``y`` being the per-index argument."""
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if np.any(self._counts == 0):
            raise UsageError("every index needs at least one cut")
        with np.errstate(invalid="ignore"):
            vals = np.log(self._etas) + (y[:, None] - self._etas) / self._etas
        return np.where(np.isnan(vals), np.inf, vals).min(axis=1)


def update_cut_set(cuts: CutSet, mixture) -> int:
    """Add the tangent cut at the current mixture value; returns the number added."""
    return cuts.update(mixture)


def _target_vector(T) -> np.ndarray:
    if isinstance(T, DenseTensor3):
        t = T.data
    elif isinstance(T, PointSet):
        t = T.weights
    else:
        t = np.asarray(T, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DomainError("target must be finite and nonnegative")
    return t


def project_simplex(y, budget: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = budget}`` by sorting."""
    y = np.asarray(y, dtype=np.float64)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - budget
    k = np.arange(1, y.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(y - tau, 0.0)


def cross_entropy(T, mixture, eps_mix: float = EPS_MIX) -> float:
    """``-sum_x T_x log(mixture_x)`` with ``0 log 0 = 0`` and the mixture clamp."""
    t = _target_vector(T)
    mix = np.asarray(mixture, dtype=np.float64).reshape(-1)
    s = t > 0
    return float(-(t[s] @ np.log(np.maximum(mix[s], eps_mix))))


def objective_ce(T, working_set: WorkingSet, w, eps_mix: float = EPS_MIX) -> float:
    """Regularized cross-entropy objective evaluated from the dense columns."""
    w = np.asarray(w, dtype=np.float64)
    return cross_entropy(T, working_set.mixture(w), eps_mix) + float(working_set.reg_costs @ w)


def recover_duals_ce(T, working_set: WorkingSet, w, eps_mix: float = EPS_MIX):
    """Dual ratio ``theta = T / (M w)`` and budget multiplier ``alpha``.

    ``alpha`` is the largest reduced score ``theta^t m - reg(m)`` over the
    working set, floored at zero.
    """
    t = _target_vector(T)
    mix = working_set.mixture(w)
    theta = t / np.maximum(mix, eps_mix)
    if len(working_set) == 0:
        return theta, 0.0
    reduced = working_set.matrix.T @ theta - working_set.reg_costs
    return theta, max(0.0, float(reduced.max()))


def relaxed_objective_ce(T, w, working_set: WorkingSet, cuts: CutSet, eps_mix: float = EPS_MIX) -> float:
    """Objective with log replaced by the envelope of the current cuts.

    Never above :func:`objective_ce`; equal when every index has a cut at its
    mixture value.
    """
    t = _target_vector(T)
    w = np.asarray(w, dtype=np.float64)
    if cuts.size != t.size:
        raise UsageError(f"cut set covers {cuts.size} indices, target has {t.size}")
    mix = np.maximum(working_set.mixture(w), eps_mix)
    env = cuts.envelope(mix)
    s = t > 0
    return float(-(t[s] @ env[s])) + float(working_set.reg_costs @ w)


def _check_simplex_target(t: np.ndarray, density: bool):
    if not density and abs(t.sum() - 1.0) > 1e-10:
        raise DomainError(f"target must sum to 1, sums to {t.sum():.17g}")


def _face_direction(A, curv, g):
    """Newton direction for the face spanned by the columns ``A`` (sum kept fixed)."""
    k = A.shape[1]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = (A * curv[:, None]).T @ A
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([-g, [0.0]])
    d = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
    return d - d.mean()  # keep the budget exactly


def _newton_step(Ms, ts, reg, w, f, g, mix, eps, config):
    """One damped Newton step on the current face of the simplex.

    The face is the support of ``w`` plus the zero coordinate with the most
    negative multiplier, if any; zero coordinates whose Newton direction points
    out of the simplex are held at the bound.  Returns None when no descent step exists,
    in which case the caller falls back to a projected-gradient step.
    """
    nu = -float(w @ g) / float(w.sum())
    free = w > 0
    mu = g + nu
    mu[free] = np.inf
    j = int(np.argmin(mu))
    if mu[j] < 0:
        free[j] = True
    curv = ts / np.maximum(mix, eps) ** 2
    for _ in range(4):
        idx = np.flatnonzero(free)
        d = _face_direction(Ms[:, idx], curv, g[idx])
        stuck = (w[idx] == 0) & (d < 0)  # would leave the simplex at once
        if not stuck.any():
            break
        free[idx[stuck]] = False
    else:
        return None
    if idx.size == 0:
        return None
    slope = float(g[idx] @ d)
    if not slope < 0:
        return None
    wi = w[idx]
    neg = d < 0
    t_max = float(np.min(wi[neg] / -d[neg])) if neg.any() else np.inf
    t = min(1.0, t_max)
    if not t > 0:
        return None
    tiny = -slope <= 1e-12 * max(1.0, abs(f))  # decrease below the resolution of f
    while t > 1e-16:
        trial = w.copy()
        trial[idx] = wi + t * d
        if t == t_max:
            trial[idx[neg][wi[neg] / -d[neg] <= t_max]] = 0.0
        trial = np.maximum(trial, 0.0)
        tmix = Ms @ trial
        if tmix.min() >= eps:
            f_new = float(-(ts @ np.log(tmix))) + float(reg @ trial)
            if tiny or f_new <= f + config.armijo_slope * t * slope:
                return trial
        t *= config.armijo_shrink
    return None


def solve_master_ce(
    T,
    working_set: WorkingSet,
    config: MasterCEConfig | None = None,
    w0=None,
    budget: float = 1.0,
) -> MasterSolutionCE:
    """Minimize ``-T^t log(M w) + reg^t w`` over ``{w >= 0, 1^t w = budget}``.

    Each iteration tries a damped Newton step restricted to the current face
    of the simplex (active-set projected Newton); if that yields no descent it
    takes a projected-gradient step with Armijo backtracking instead.  The
    first trial gradient step is the Barzilai-Borwein step from the previous
    move (``armijo_step`` on the first iteration).  Slack in the weight budget always belongs to the baseline atom, so the
    equality-constrained problem is solved.
    """
    config = config or MasterCEConfig()
    t = _target_vector(T)
    if t.size != working_set.size:
        raise DimensionError(f"target has {t.size} entries, working set columns {working_set.size}")
    _check_simplex_target(t, isinstance(working_set.context, PointSet))
    b0 = working_set.baseline_index
    if b0 is None:
        raise UsageError("cross-entropy master needs the baseline atom in the working set")
    if working_set[b0].reg_cost != 0:
        raise UsageError("baseline atom must have zero regularization cost")

    m = len(working_set)
    reg = working_set.reg_costs
    s = t > 0
    ts = t[s]
    Ms = np.ascontiguousarray(working_set.matrix[s])
    eps = config.eps_mix

    def f_and_mix(w):
        # iterates stay where the clamp is inactive, so f is smooth along the path
        mix = Ms @ w
        if mix.min() < eps:
            return np.inf, mix
        return float(-(ts @ np.log(mix))) + float(reg @ w), mix

    def grad(mix):
        return -(Ms.T @ (ts / np.maximum(mix, eps))) + reg

    w = np.zeros(m)
    if w0 is not None:
        w0 = np.asarray(w0, dtype=np.float64)
        if w0.size > m:
            raise UsageError(f"warm start has {w0.size} entries for {m} atoms")
        w[: w0.size] = np.maximum(w0, 0.0)
        w[b0] += budget - w.sum()
        if w[b0] < 0:
            w = project_simplex(w, budget)
        if (Ms @ w).min() < eps:  # pull an unusable warm start toward the baseline
            w = 0.5 * w
            w[b0] += 0.5 * budget
    else:
        w[b0] = budget

    f, mix = f_and_mix(w)
    g = grad(mix)
    step = config.armijo_step
    converged = False
    it = 0
    measure = float(np.max(np.abs(w - project_simplex(w - g, budget))))
    while it < config.max_iters:
        if measure <= config.tol_opt:
            converged = True
            break
        it += 1
        moved = False
        if config.newton:
            w_new = _newton_step(Ms, ts, reg, w, f, g, mix, eps, config)
            if w_new is not None:
                f_new, mix_new = f_and_mix(w_new)
                moved = True
        if not moved:
            while True:
                w_new = project_simplex(w - step * g, budget)
                f_new, mix_new = f_and_mix(w_new)
                if f_new <= f + config.armijo_slope * float(g @ (w_new - w)):
                    break
                if step < 1e-20:
                    w_new, f_new, mix_new = w, f, mix
                    break
                step *= config.armijo_shrink
            if w_new is w:  # no descent possible at machine precision
                break
        g_new = grad(mix_new)
        dw = w_new - w
        dg = g_new - g
        w, f, mix, g = w_new, f_new, mix_new, g_new
        measure = float(np.max(np.abs(w - project_simplex(w - g, budget))))
        curv = float(dw @ dg)
        step = float(dw @ dw) / curv if curv > 0 else config.armijo_step
        step = min(max(step, 1e-12), 1e12)

    full_mix = working_set.mixture(w)
    theta, alpha = recover_duals_ce(t, working_set, w, eps)
    return MasterSolutionCE(
        weights=w,
        baseline_index=b0,
        objective=cross_entropy(t, full_mix, eps) + float(reg @ w),
        theta=theta,
        alpha=alpha,
        surrogate=-np.log(np.maximum(full_mix, eps)),
        mixture=full_mix,
        opt_measure=measure,
        converged=converged,
        iterations=it,
    )
