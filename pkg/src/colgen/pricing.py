"""Pricing oracles: find atoms with large dual score ``theta^t m``.

Every oracle runs several independent restarts, keeps the distinct local
optima and returns ``(atom, score)`` pairs sorted by decreasing score.  Scores
are recomputed by contraction from the final factors, never taken from an
internal bound.

L2 oracles return each optimum together with its negation, since both signs
of a rank-1 tensor are admissible columns.  Cross-entropy oracles work on the
normalized dual and multiply the mass back in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import (
    Atom,
    DenseTensor3,
    PointSet,
    _as_array3,
    contract,
    gaussian_density,
    multilinear,
    normalize_dual,
)


@dataclass(frozen=True)
class PricingConfig:
    restarts: int = 10
    max_iters: int = 500
    tol: float = 1e-10
    seed: int = 0
    armijo_step: float = 1.0
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    dedup_cos: float = 1e-6

    def __post_init__(self):
        if self.restarts < 1:
            raise ParameterError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol > 0 and self.dedup_cos > 0):
            raise ParameterError("tolerances must be positive")


def restart_rng(cfg: PricingConfig, round_index: int, restart: int) -> np.random.Generator:
    """Generator for one restart; independent of how many other restarts run."""
    return np.random.default_rng([cfg.seed, round_index, restart])


def _random_unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _same_direction(f1, f2, tol):
    return all(abs(float(a @ b)) > 1.0 - tol for a, b in zip(f1, f2))


def _distinct(found, tol):
    """Keep the first of every group of optima pointing the same way (up to sign).

    ``found`` holds ``(score, restart, factors, payload)`` and is visited in
    order of decreasing score, ties broken by restart index.
    """
    kept = []
    for item in sorted(found, key=lambda it: (-it[0], it[1])):
        if not any(_same_direction(item[2], k[2], tol) for k in kept):
            kept.append(item)
    return kept


def _signed_pairs(kept, make):
    out = []
    for s, _, factors, _ in kept:
        atom = make(*factors)
        out.append((atom, s))
        out.append((atom.negated(), -s))
    out.sort(key=lambda p: -p[1])
    return out


# ---------------------------------------------------------------- L2, symmetric


def power_iteration(arr: np.ndarray, v0, max_iters: int, tol: float, tau: float = 1e-6):
    """Shifted tensor power iteration ``v <- (theta(., v, v) + s v) / ||.||``.

    The shift is chosen adaptively from the smallest eigenvalue of the Hessian
    of ``theta(v, v, v)`` (``6 theta(., ., v)`` when symmetric):
    ``s = max(0, (tau - lambda_min) / 3)``, which makes the step an ascent step
    (no shift is needed where the objective is locally convex).  If rounding
    ever produces a decrease, the shift is doubled and the step retried.  Fixed
    points satisfy the eigen-equation ``theta(., v, v) = theta(v, v, v) v``.

    Returns
    -------
    v : ndarray
        Final unit vector, oriented so that ``theta(v, v, v) >= 0``.
    converged : bool
        True when successive iterates agree up to sign within ``tol``.
    """
    v = np.asarray(v0, dtype=np.float64)
    v = v / np.linalg.norm(v)
    f = multilinear(arr, v, v, v)
    if f < 0:
        v, f = -v, -f
    cap = 4.0 * np.linalg.norm(arr)
    converged = False
    for _ in range(max_iters):
        g = (arr @ v) @ v
        part = arr @ v + np.transpose(arr, (0, 2, 1)) @ v + np.tensordot(v, arr, axes=(0, 0))
        lam_min = np.linalg.eigvalsh(part + part.T)[0]
        shift = max(0.0, (tau - lam_min) / 3.0)
        while True:
            u = g + shift * v
            u = u / np.linalg.norm(u)
            fu = multilinear(arr, u, u, u)
            if fu >= f or shift > cap:
                break
            shift = max(2.0 * shift, cap / 256.0)
        step = min(np.linalg.norm(u - v), np.linalg.norm(u + v))
        v, f = u, fu
        if step <= tol:
            converged = True
            break
    if multilinear(arr, v, v, v) < 0:
        v = -v
    return v, converged


def price_sym_l2(theta, cfg: PricingConfig | None = None, round_index: int = 0, starts=None):
    """Power-iteration oracle for symmetric rank-1 atoms under L2 loss.

    Parameters
    ----------
    theta : DenseTensor3 or ndarray
        Symmetric dual tensor (the residual).
    cfg : PricingConfig, optional
    round_index : int
        Mixed into the restart seeds so successive rounds explore new starts.
    starts : sequence of vectors, optional
        Explicit starting vectors; replaces the random starts.

    Returns
    -------
    list of (Atom, float)
        ``+m`` and ``-m`` for every distinct local optimum, sorted by score.
        Empty when ``theta`` is identically zero.
    """
    cfg = cfg or PricingConfig()
    arr = _as_array3(theta)
    n = arr.shape[0]
    if not np.any(arr):
        return []
    if starts is None:
        starts = [_random_unit(restart_rng(cfg, round_index, r), n) for r in range(cfg.restarts)]
    found = []
    for r, v0 in enumerate(starts):
        v, _ = power_iteration(arr, np.asarray(v0, dtype=np.float64), cfg.max_iters, cfg.tol)
        found.append((multilinear(arr, v, v, v), r, (v,), None))
    return _signed_pairs(_distinct(found, cfg.dedup_cos), Atom.sym)


def sym_l2_gradient(theta, v) -> np.ndarray:
    """Euclidean gradient of ``theta(v, v, v)``: the sum of the three mode contractions."""
    arr = _as_array3(theta)
    v = np.asarray(v, dtype=np.float64)
    return contract(arr, v, v, 1) + contract(arr, v, v, 2) + contract(arr, v, v, 3)


def sym_l2_projected_gradient(theta, v) -> np.ndarray:
    """Gradient of ``theta(v, v, v)`` projected onto the tangent space of the unit sphere at ``v``."""
    v = np.asarray(v, dtype=np.float64)
    g = sym_l2_gradient(theta, v)
    return g - (g @ v) * v


def sphere_ascent(arr: np.ndarray, v0, cfg: PricingConfig):
    """Projected gradient ascent of ``theta(v, v, v)`` on the unit sphere.

    Each iteration tries ``v + step * grad`` (renormalized) with the step
    starting at ``cfg.armijo_step`` and halving until the Armijo condition holds.

    Returns
    -------
    v : ndarray
    trace : list of float
        Objective after every accepted step, starting with the initial value.
    """
    v = np.asarray(v0, dtype=np.float64)
    v = v / np.linalg.norm(v)
    f = multilinear(arr, v, v, v)
    trace = [f]
    for _ in range(cfg.max_iters):
        g = sym_l2_gradient(arr, v)
        step = cfg.armijo_step
        while True:
            cand = v + step * g
            cand = cand / np.linalg.norm(cand)
            f_new = multilinear(arr, cand, cand, cand)
            if f_new >= f + cfg.armijo_slope * float(g @ (cand - v)) or step < 1e-20:
                break
            step *= cfg.armijo_shrink
        if f_new < f:
            break
        moved = np.linalg.norm(cand - v)
        v, f = cand, f_new
        trace.append(f)
        if moved <= cfg.tol:
            break
    return v, trace


def price_sym_l2_pg(theta, cfg: PricingConfig | None = None, round_index: int = 0, starts=None):
    """Projected-gradient oracle; same contract as :func:`price_sym_l2`."""
    cfg = cfg or PricingConfig()
    arr = _as_array3(theta)
    n = arr.shape[0]
    if not np.any(arr):
        return []
    if starts is None:
        starts = [_random_unit(restart_rng(cfg, round_index, r), n) for r in range(cfg.restarts)]
    found = []
    for r, v0 in enumerate(starts):
        v, _ = sphere_ascent(arr, v0, cfg)
        found.append((multilinear(arr, v, v, v), r, (v,), None))
    return _signed_pairs(_distinct(found, cfg.dedup_cos), Atom.sym)


# ------------------------------------------------------------- L2, non-symmetric


def alternating_rank1(arr: np.ndarray, factors, max_iters: int, tol: float):
    """Cyclic exact mode updates for ``max theta(a, b, c)`` over unit vectors.

    Returns ``(a, b, c)``, the score after every mode update, and a flag that
    is False when a contraction vanished (degenerate start).
    """
    a, b, c = (np.asarray(f, dtype=np.float64) for f in factors)
    trace = []
    for _ in range(max_iters):
        old = (a, b, c)
        ga = (arr @ c) @ b
        na = np.linalg.norm(ga)
        if na == 0.0:
            return (a, b, c), trace, False
        a = ga / na
        gb = a @ (arr @ c)
        nb = np.linalg.norm(gb)
        if nb == 0.0:
            return (a, b, c), trace, False
        b = gb / nb
        gc = contract(arr, a, b, 3)
        nc = np.linalg.norm(gc)
        if nc == 0.0:
            return (a, b, c), trace, False
        c = gc / nc
        trace.extend((na, nb, nc))
        if max(np.linalg.norm(x - y) for x, y in zip((a, b, c), old)) <= tol:
            break
    return (a, b, c), trace, True


def price_nonsym_l2(theta, cfg: PricingConfig | None = None, round_index: int = 0, max_degenerate: int = 10):
    """Alternating oracle for non-symmetric rank-1 atoms under L2 loss."""
    cfg = cfg or PricingConfig()
    arr = _as_array3(theta)
    if not np.any(arr):
        return []
    found = []
    for r in range(cfg.restarts):
        rng = restart_rng(cfg, round_index, r)
        for _ in range(max_degenerate):
            start = tuple(_random_unit(rng, n) for n in arr.shape)
            (a, b, c), _, ok = alternating_rank1(arr, start, cfg.max_iters, cfg.tol)
            if ok:
                found.append((multilinear(arr, a, b, c), r, (a, b, c), None))
                break
    return _signed_pairs(_distinct(found, cfg.dedup_cos), Atom.nonsym)


# ------------------------------------------------------------- cross entropy


def _jensen_starts(arr_hat: np.ndarray, cfg: PricingConfig, round_index: int, symmetric: bool):
    """Proposal distributions: the normalized dual first, then randomized ones.

    A random restart draws factors from Dirichlet(1) and sets ``z`` to the
    posterior ``theta * a b c`` they induce (uniform over the support of
    ``theta`` if that product vanishes).  Drawing ``z`` cell-wise from
    Dirichlet(1) instead would give near-uniform marginals, so every restart
    would start from the centre of the simplex.
    """
    yield arr_hat
    for r in range(1, cfg.restarts):
        rng = restart_rng(cfg, round_index, r)
        if symmetric:
            a = rng.dirichlet(np.ones(arr_hat.shape[0]))
            factors = (a, a, a)
        else:
            factors = tuple(rng.dirichlet(np.ones(n)) for n in arr_hat.shape)
        z = arr_hat * np.multiply.outer(np.multiply.outer(factors[0], factors[1]), factors[2])
        mass = z.sum()
        if not mass > 0:
            z, mass = (arr_hat > 0).astype(np.float64), float(np.count_nonzero(arr_hat))
        yield z / mass


def em_sym_ce(arr_hat: np.ndarray, z0: np.ndarray, max_iters: int, tol: float):
    """Alternate ``v ~ marginals(z)`` and ``z ~ theta * v v v`` on a normalized dual.

    ``v`` is proportional to the sum of the three one-mode marginals of ``z``.

    Returns
    -------
    v : ndarray
        Probability vector.
    bounds : list of float
        Tight Jensen bound ``log theta(v, v, v)`` after every full cycle.
    """
    z = z0
    bounds = []
    v = None
    for _ in range(max_iters):
        v = z.sum(axis=(1, 2)) + z.sum(axis=(0, 2)) + z.sum(axis=(0, 1))
        v = v / v.sum()
        z = arr_hat * np.multiply.outer(np.multiply.outer(v, v), v)
        mass = z.sum()
        if not mass > 0:
            break
        z = z / mass
        bounds.append(float(np.log(mass)))
        if len(bounds) > 1 and abs(bounds[-1] - bounds[-2]) <= tol:
            break
    return v, bounds


def em_nonsym_ce(arr_hat: np.ndarray, z0: np.ndarray, max_iters: int, tol: float):
    """Non-symmetric counterpart of :func:`em_sym_ce`: one marginal per factor."""
    z = z0
    bounds = []
    factors = None
    for _ in range(max_iters):
        a = z.sum(axis=(1, 2))
        b = z.sum(axis=(0, 2))
        c = z.sum(axis=(0, 1))
        factors = (a / a.sum(), b / b.sum(), c / c.sum())
        z = arr_hat * np.multiply.outer(np.multiply.outer(factors[0], factors[1]), factors[2])
        mass = z.sum()
        if not mass > 0:
            break
        z = z / mass
        bounds.append(float(np.log(mass)))
        if len(bounds) > 1 and abs(bounds[-1] - bounds[-2]) <= tol:
            break
    return factors, bounds


def _unit_dir(f):
    return f / np.linalg.norm(f)


def price_sym_ce(theta, cfg: PricingConfig | None = None, round_index: int = 0):
    """Jensen/EM oracle for symmetric rank-1 probability tensors.

    The dual is normalized first; returned scores carry its mass again.
    Raises :class:`DegenerateDualError` for an all-zero dual.
    """
    cfg = cfg or PricingConfig()
    theta_hat, scale = normalize_dual(theta)
    arr = _as_array3(theta_hat)
    found = []
    for r, z0 in enumerate(_jensen_starts(arr, cfg, round_index, True)):
        v, bounds = em_sym_ce(arr, z0, cfg.max_iters, cfg.tol)
        if not bounds:
            continue
        found.append((scale * multilinear(arr, v, v, v), r, (_unit_dir(v),), (v,)))
    kept = _distinct(found, cfg.dedup_cos)
    return [(Atom.sym(payload[0]), s) for s, _, _, payload in kept]


def price_nonsym_ce(theta, cfg: PricingConfig | None = None, round_index: int = 0):
    """Jensen/EM oracle for non-symmetric rank-1 probability tensors."""
    cfg = cfg or PricingConfig()
    theta_hat, scale = normalize_dual(theta)
    arr = _as_array3(theta_hat)
    found = []
    for r, z0 in enumerate(_jensen_starts(arr, cfg, round_index, False)):
        factors, bounds = em_nonsym_ce(arr, z0, cfg.max_iters, cfg.tol)
        if not bounds:
            continue
        found.append(
            (scale * multilinear(arr, *factors), r, tuple(_unit_dir(f) for f in factors), factors)
        )
    kept = _distinct(found, cfg.dedup_cos)
    return [(Atom.nonsym(*payload), s) for s, _, _, payload in kept]


def em_gmm(theta_hat: np.ndarray, positions: np.ndarray, sigma: float, mu0: float, max_iters: int, tol: float):
    """Weighted mean-shift updates for the mean of a fixed-width Gaussian.

    Returns the final mean and the tight Jensen bound ``log sum theta N(p; mu)``
    recorded after each E-step.
    """
    mu = float(mu0)
    bounds = []
    for _ in range(max_iters):
        z = theta_hat * gaussian_density(positions, mu, sigma)
        mass = z.sum()
        if not mass > 0:
            break
        bounds.append(float(np.log(mass)))
        mu_new = float((z / mass) @ positions)
        done = abs(mu_new - mu) <= tol * (1.0 + abs(mu))
        mu = mu_new
        if done:
            break
    return mu, bounds


def price_gmm(theta, points: PointSet, sigma: float, cfg: PricingConfig | None = None, round_index: int = 0, init_mu=None):
    """Oracle over fixed-width Gaussian atoms centred anywhere on the line.

    Restarts place the mean at a point drawn with probability proportional to
    the dual; ``init_mu`` overrides the first restart.
    """
    cfg = cfg or PricingConfig()
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if isinstance(theta, DenseTensor3):
        theta = theta.data
    theta_hat, scale = normalize_dual(np.asarray(theta, dtype=np.float64).reshape(-1))
    p = points.positions
    found = []
    for r in range(cfg.restarts):
        if r == 0 and init_mu is not None:
            mu0 = float(init_mu)
        else:
            rng = restart_rng(cfg, round_index, r)
            mu0 = float(p[rng.choice(p.size, p=theta_hat)])
        mu, bounds = em_gmm(theta_hat, p, sigma, mu0, cfg.max_iters, cfg.tol)
        s = scale * float(theta_hat @ gaussian_density(p, mu, sigma))
        found.append((s, r, mu))
    kept = []
    for s, r, mu in sorted(found, key=lambda it: (-it[0], it[1])):
        if not any(abs(mu - k[2]) <= cfg.dedup_cos * (1.0 + abs(mu)) for k in kept):
            kept.append((s, r, mu))
    return [(Atom.gaussian(mu, sigma), s) for s, _, mu in kept]
