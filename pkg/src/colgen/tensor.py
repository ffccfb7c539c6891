"""Dense order-3 tensors, primitive atoms and the contractions used by pricing.

Tensors are stored fully dense in row-major order, so the flat index of
``(i, j, k)`` is ``i * n2 * n3 + j * n3 + k``.  All arithmetic is float64.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import DegenerateDualError, DimensionError, DomainError, ParameterError

SQRT_2PI = math.sqrt(2.0 * math.pi)


class AtomKind(str, enum.Enum):
    SYM_RANK1 = "sym_rank1"
    NONSYM_RANK1 = "nonsym_rank1"
    GAUSSIAN = "gaussian"
    BASELINE = "baseline"


@functools.lru_cache(maxsize=32)
def canonical_index(n: int) -> np.ndarray:
    """Flat index of the sorted representative ``(i<=j<=k)`` for every cell of an n^3 tensor."""
    idx = np.indices((n, n, n)).reshape(3, -1)
    idx.sort(axis=0)
    out = (idx[0] * n + idx[1]) * n + idx[2]
    out.setflags(write=False)
    return out


def symmetrize(arr: np.ndarray) -> np.ndarray:
    """Average over the six mode permutations.

    The result is bit-exactly symmetric: every cell is copied from its sorted
    representative after averaging.
    """
    arr = np.asarray(arr, dtype=np.float64)
    n = arr.shape[0]
    if arr.shape != (n, n, n):
        raise DimensionError(f"symmetrize needs a cubic tensor, got shape {arr.shape}")
    perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
    avg = sum(np.transpose(arr, p) for p in perms) / 6.0
    return avg.reshape(-1)[canonical_index(n)].reshape(n, n, n)


@dataclass(frozen=True, eq=False)
class DenseTensor3:
    """Order-3 dense tensor with a flat row-major ``data`` buffer."""

    dims: tuple[int, int, int]
    data: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise DimensionError(f"dims must be three positive integers, got {self.dims}")
        data = np.array(self.data, dtype=np.float64).reshape(-1)
        if data.size != dims[0] * dims[1] * dims[2]:
            raise DimensionError(
                f"data has {data.size} entries, dims {dims} need {dims[0] * dims[1] * dims[2]}"
            )
        if not np.all(np.isfinite(data)):
            raise DomainError("tensor entries must be finite")
        if self.symmetric:
            if not dims[0] == dims[1] == dims[2]:
                raise DimensionError(f"symmetric tensor needs equal dims, got {dims}")
            if not np.array_equal(data, data[canonical_index(dims[0])]):
                raise DomainError("tensor flagged symmetric but entries differ under permutation")
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr, symmetric: bool = False) -> "DenseTensor3":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"expected a 3-d array, got ndim={arr.ndim}")
        return cls(arr.shape, arr.reshape(-1), symmetric)

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    def __eq__(self, other):
        if not isinstance(other, DenseTensor3):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.symmetric == other.symmetric
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True)
class PointSet:
    """One-dimensional sample positions with nonnegative target weights."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.array(self.positions, dtype=np.float64).reshape(-1)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if p.size != w.size:
            raise DimensionError(f"{p.size} positions but {w.size} weights")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(w))):
            raise DomainError("positions and weights must be finite")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.positions.size


@dataclass(frozen=True, eq=False)
class Atom:
    """A primitive column: signed rank-1 tensor, Gaussian bump, or the uniform baseline.

    Use the ``sym``, ``nonsym``, ``gaussian`` and ``baseline`` constructors
    rather than filling fields by hand.
    """

    kind: AtomKind
    factors: tuple[np.ndarray, ...] = ()
    mu: float | None = None
    sigma: float | None = None
    sign: int = 1
    reg_cost: float = 0.0

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ParameterError(f"sign must be +1 or -1, got {self.sign}")
        if self.reg_cost < 0 or not math.isfinite(self.reg_cost):
            raise ParameterError(f"reg_cost must be finite and >= 0, got {self.reg_cost}")
        frozen = []
        for f in self.factors:
            f = np.array(f, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(f)):
                raise DomainError("atom factors must be finite")
            f.setflags(write=False)
            frozen.append(f)
        object.__setattr__(self, "factors", tuple(frozen))
        if self.kind is AtomKind.GAUSSIAN and (self.sigma is None or not self.sigma > 0):
            raise ParameterError(f"gaussian atom needs sigma > 0, got {self.sigma}")

    @classmethod
    def sym(cls, v, sign: int = 1, reg_cost: float = 0.0) -> "Atom":
        return cls(AtomKind.SYM_RANK1, (v,), sign=sign, reg_cost=reg_cost)

    @classmethod
    def nonsym(cls, a, b, c, sign: int = 1, reg_cost: float = 0.0) -> "Atom":
        return cls(AtomKind.NONSYM_RANK1, (a, b, c), sign=sign, reg_cost=reg_cost)

    @classmethod
    def gaussian(cls, mu: float, sigma: float, reg_cost: float = 0.0) -> "Atom":
        return cls(AtomKind.GAUSSIAN, mu=float(mu), sigma=float(sigma), reg_cost=reg_cost)

    @classmethod
    def baseline(cls) -> "Atom":
        return cls(AtomKind.BASELINE)

    @property
    def mode_factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The three per-mode factors (the shared vector repeated for symmetric atoms)."""
        if self.kind is AtomKind.SYM_RANK1:
            v = self.factors[0]
            return v, v, v
        if self.kind is AtomKind.NONSYM_RANK1:
            return self.factors
        raise DimensionError(f"{self.kind.value} atom has no tensor factors")

    def negated(self) -> "Atom":
        return replace(self, sign=-self.sign)

    def with_reg_cost(self, reg_cost: float) -> "Atom":
        return replace(self, reg_cost=float(reg_cost))


Context = Union[tuple, DenseTensor3, PointSet]
Dual = Union[DenseTensor3, np.ndarray]


def vectorize(t: DenseTensor3) -> np.ndarray:
    return t.data.copy()


def devectorize(vec, dims, symmetric: bool = False) -> DenseTensor3:
    vec = np.asarray(vec, dtype=np.float64)
    dims = tuple(dims)
    if vec.ndim != 1 or len(dims) != 3 or vec.size != int(np.prod(dims)):
        raise DimensionError(f"vector of length {vec.size} does not fit dims {dims}")
    return DenseTensor3(dims, vec, symmetric)


def gaussian_density(p, mu: float, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    z = (np.asarray(p, dtype=np.float64) - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * SQRT_2PI)


def _context_size(context: Context) -> int:
    if isinstance(context, PointSet):
        return len(context)
    if isinstance(context, DenseTensor3):
        return context.size
    return int(np.prod(context))


def atom_densify(atom: Atom, context: Context) -> np.ndarray:
    """Vectorized primitive including its sign.

    ``context`` is a dims tuple (or a tensor providing one) for rank-1 and
    baseline atoms, and a :class:`PointSet` for Gaussian atoms.
    """
    if atom.kind is AtomKind.BASELINE:
        size = _context_size(context)
        return np.full(size, 1.0 / size)
    if atom.kind is AtomKind.GAUSSIAN:
        if not isinstance(context, PointSet):
            raise DimensionError("gaussian atoms need a PointSet context")
        return gaussian_density(context.positions, atom.mu, atom.sigma)

    dims = context.dims if isinstance(context, DenseTensor3) else tuple(context)
    a, b, c = atom.mode_factors
    if (a.size, b.size, c.size) != tuple(dims):
        raise DimensionError(f"factor lengths {(a.size, b.size, c.size)} do not match dims {dims}")
    out = np.multiply.outer(np.multiply.outer(a, b), c).reshape(-1)
    if atom.kind is AtomKind.SYM_RANK1:
        # products in a different order differ in the last bit; pin to the sorted cell
        out = out[canonical_index(a.size)]
    if atom.sign < 0:
        out = -out
    return out


def _as_array3(theta: Dual, dims=None) -> np.ndarray:
    if isinstance(theta, DenseTensor3):
        arr = theta.array
    else:
        arr = np.asarray(theta, dtype=np.float64)
        if arr.ndim == 1 and dims is not None:
            if arr.size != int(np.prod(dims)):
                raise DimensionError(f"dual of length {arr.size} does not fit dims {tuple(dims)}")
            arr = arr.reshape(dims)
    if arr.ndim != 3:
        raise DimensionError(f"expected an order-3 dual, got shape {arr.shape}")
    if dims is not None and arr.shape != tuple(dims):
        raise DimensionError(f"dual shape {arr.shape} does not match {tuple(dims)}")
    return arr


def contract(theta: Dual, u, w, held_mode: int) -> np.ndarray:
    """Contract ``theta`` with ``u`` and ``w`` over the two modes other than ``held_mode``.

    ``u`` belongs to the lower-numbered free mode, ``w`` to the higher one, so
    ``held_mode=1`` gives ``g_i = sum_jk theta_ijk u_j w_k``.
    """
    arr = _as_array3(theta)
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n1, n2, n3 = arr.shape
    if held_mode == 1:
        expect = (n2, n3)
    elif held_mode == 2:
        expect = (n1, n3)
    elif held_mode == 3:
        expect = (n1, n2)
    else:
        raise DimensionError(f"held_mode must be 1, 2 or 3, got {held_mode}")
    if u.shape != (expect[0],) or w.shape != (expect[1],):
        raise DimensionError(
            f"contraction vectors {u.shape}, {w.shape} do not match free modes {expect}"
        )
    if held_mode == 1:
        return (arr @ w) @ u
    if held_mode == 2:
        return u @ (arr @ w)
    return w @ (u @ arr.reshape(n1, n2 * n3)).reshape(n2, n3)


def multilinear(arr: np.ndarray, a, b, c) -> float:
    """``sum_ijk arr_ijk a_i b_j c_k`` for a plain 3-d array."""
    return float(((arr @ c) @ b) @ a)


def score(theta: Dual, atom: Atom, points: PointSet | None = None) -> float:
    """Dual-weighted score ``theta^t m`` computed without densifying the atom."""
    if atom.kind is AtomKind.GAUSSIAN:
        if points is None:
            raise DimensionError("scoring a gaussian atom needs the PointSet")
        th = np.asarray(theta, dtype=np.float64).reshape(-1)
        if th.size != len(points):
            raise DimensionError(f"dual has {th.size} entries for {len(points)} points")
        return float(th @ gaussian_density(points.positions, atom.mu, atom.sigma))
    if atom.kind is AtomKind.BASELINE:
        th = theta.data if isinstance(theta, DenseTensor3) else np.asarray(theta, dtype=np.float64)
        return float(th.sum() / th.size)
    a, b, c = atom.mode_factors
    arr = _as_array3(theta, (a.size, b.size, c.size))
    return atom.sign * multilinear(arr, a, b, c)


def normalize_dual(theta: Dual):
    """Scale a nonnegative dual to unit mass.

    Returns
    -------
    theta_hat : same type as ``theta``
        Dual divided by its total mass.
    scale : float
        The total mass ``1^t theta``.
    """
    data = theta.data if isinstance(theta, DenseTensor3) else np.asarray(theta, dtype=np.float64)
    if np.any(data < 0):
        raise DomainError("dual must be entrywise nonnegative to normalize")
    scale = float(data.sum())
    if not scale > 0:
        raise DegenerateDualError("dual has zero total mass")
    if isinstance(theta, DenseTensor3):
        return DenseTensor3(theta.dims, theta.data / scale, theta.symmetric), scale
    return data / scale, scale
