"""Restricted master for the L2 + L1 family.

Solves ``min_{w >= 0} 1/2 ||T - M w||^2 + reg^t w`` over the working-set
columns by cyclic coordinate descent in Gram space, then reads the duals off
the residual: ``theta = T - M w``, ``lambda = max(theta, 0)``,
``psi = max(-theta, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DimensionError, DomainError, UsageError
from .tensor import DenseTensor3
from .workingset import WorkingSet


@dataclass(frozen=True)
class MasterL2Config:
    tol_kkt: float = 1e-8
    max_sweeps: int = 100_000
    rel_change: float = 1e-10
    active_set: bool = True


@dataclass
class MasterSolutionL2:
    weights: np.ndarray
    objective: float
    theta: np.ndarray
    surrogate: np.ndarray
    lam: np.ndarray
    psi: np.ndarray
    kkt_residual: float
    converged: bool
    sweeps: int


@numba.njit(cache=True)
def _kkt(q, reg, w):
    worst = 0.0
    for j in range(w.size):
        slack = reg[j] - q[j]
        v = abs(slack) if w[j] > 0.0 else max(0.0, -slack)
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True)
def _coordinate_descent(G, b, reg, w, max_sweeps, tol_kkt, rel_change):
    m = w.size
    q = b - G @ w  # q_j = m_j^t (T - M w)
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(m):
            d = G[j, j]
            old = w[j]
            new = (q[j] + old * d - reg[j]) / d
            if new < 0.0:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                for i in range(m):
                    q[i] -= G[i, j] * delta
                w[j] = new
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if sweep % 256 == 0:
            q = b - G @ w
        wmax = 0.0
        for j in range(m):
            if w[j] > wmax:
                wmax = w[j]
        if biggest <= rel_change * (1.0 + wmax):
            q = b - G @ w
            if _kkt(q, reg, w) <= tol_kkt:
                return sweep, True
    return max_sweeps, False


def _active_set(G, c, w, max_iters=None):
    """Lawson-Hanson active set for ``min 1/2 w^t G w - c^t w`` over ``w >= 0``.

    Works in place on ``w`` (a feasible warm start).  Returns False if the
    iteration budget ran out; the caller then polishes with coordinate descent.
    """
    m = w.size
    max_iters = max_iters or 3 * m + 30
    free = w > 0
    scale = max(1.0, float(np.abs(c).max()))
    tol = 1e-13 * scale
    for _ in range(max_iters):
        # inner loop: make the unconstrained solution on the free set feasible
        while free.any():
            idx = np.flatnonzero(free)
            z = np.linalg.lstsq(G[np.ix_(idx, idx)], c[idx], rcond=None)[0]
            if np.all(z > 0):
                w[:] = 0.0
                w[idx] = z
                break
            cur = w[idx]
            bad = z <= 0
            alpha = np.min(cur[bad] / (cur[bad] - z[bad]))
            w[:] = 0.0
            w[idx] = cur + alpha * (z - cur)
            w[w <= 1e-15 * max(1.0, float(w.max()))] = 0.0
            free = w > 0
        g = c - G @ w
        g[free] = -np.inf
        j = int(np.argmax(g))
        if g[j] <= tol:
            return True
        free[j] = True
    return False


def _target_vector(T) -> np.ndarray:
    vec = T.data if isinstance(T, DenseTensor3) else np.asarray(T, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise DomainError("target must be finite")
    return vec


def objective_l2(T, working_set: WorkingSet, w) -> float:
    """Regularized L2 objective evaluated directly from the dense columns."""
    t = _target_vector(T)
    r = t - working_set.mixture(w)
    return 0.5 * float(r @ r) + float(working_set.reg_costs @ np.asarray(w, dtype=np.float64))


def dual_objective_l2(T, lam, psi) -> float:
    """Value of the L2 dual at multipliers ``(lam, psi)``."""
    t = _target_vector(T)
    lam = np.asarray(lam, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    return float(-0.5 * lam @ lam - psi @ lam - 0.5 * psi @ psi + t @ lam - t @ psi)


def solve_master_l2(
    T, working_set: WorkingSet, config: MasterL2Config | None = None, w0=None
) -> MasterSolutionL2:
    """Globally solve the restricted L2 master.

    A Lawson-Hanson active-set pass finds the support, then coordinate
    descent polishes the weights until the KKT residual is below tolerance.

    Parameters
    ----------
    T : DenseTensor3 or array_like
        Target, vectorized row-major.
    working_set : WorkingSet
        Columns to combine.  May be empty.
    config : MasterL2Config, optional
    w0 : array_like, optional
        Warm start.  Shorter than the working set means new columns start at 0.

    Returns
    -------
    MasterSolutionL2
        ``converged`` is False when the sweep cap was hit; the weights are the
        last iterate in that case.
    """
    config = config or MasterL2Config()
    t = _target_vector(T)
    if t.size != working_set.size:
        raise DimensionError(f"target has {t.size} entries, working set columns {working_set.size}")
    m = len(working_set)
    reg = working_set.reg_costs
    w = np.zeros(m)
    if w0 is not None:
        w0 = np.asarray(w0, dtype=np.float64)
        if w0.size > m:
            raise UsageError(f"warm start has {w0.size} entries for {m} atoms")
        w[: w0.size] = np.maximum(w0, 0.0)

    if m == 0:
        sweeps, converged = 0, True
    else:
        M = working_set.matrix
        b = M.T @ t
        G = np.ascontiguousarray(working_set.gram)
        if config.active_set:
            _active_set(G, b - reg, w)
        sweeps, converged = _coordinate_descent(
            G, b, reg, w,
            config.max_sweeps, config.tol_kkt, config.rel_change,
        )
    theta = t - working_set.mixture(w)
    q = working_set.matrix.T @ theta
    kkt = float(_kkt(q, reg, w)) if m else 0.0
    return MasterSolutionL2(
        weights=w,
        objective=0.5 * float(theta @ theta) + float(reg @ w),
        theta=theta,
        surrogate=np.abs(theta),
        lam=np.maximum(theta, 0.0),
        psi=np.maximum(-theta, 0.0),
        kkt_residual=kkt,
        converged=bool(converged),
        sweeps=int(sweeps),
    )


def kkt_report_l2(sol: MasterSolutionL2, working_set: WorkingSet) -> np.ndarray:
    """Per-atom dual slack ``reg_cost(m) - theta^t m``; negative means violated."""
    if sol.weights.size != len(working_set) or sol.theta.size != working_set.size:
        raise UsageError("solution was not produced from this working set")
    return working_set.reg_costs - working_set.matrix.T @ sol.theta
