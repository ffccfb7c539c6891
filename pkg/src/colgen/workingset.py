"""The working set: atoms currently instantiated as dense columns."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import Atom, AtomKind, Context, DenseTensor3, PointSet, atom_densify


class WorkingSet:
    """Ordered atoms with their densified columns and cached Gram matrix.

    Columns are densified once on insertion; ``gram`` holds ``m_i^t m_j`` and
    grows by one row/column per added atom.
    """

    def __init__(self, context: Context, atoms=()):
        if isinstance(context, DenseTensor3):
            context = context.dims
        self.context = context if isinstance(context, PointSet) else tuple(context)
        self.size = len(context) if isinstance(context, PointSet) else int(np.prod(self.context))
        self.atoms: list[Atom] = []
        self._cols = np.empty((self.size, 8))
        self._gram = np.empty((8, 8))
        for a in atoms:
            self.add(a)

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def __getitem__(self, i):
        return self.atoms[i]

    @property
    def matrix(self) -> np.ndarray:
        """The ``(|T|, len(self))`` matrix of stacked columns (a view)."""
        return self._cols[:, : len(self.atoms)]

    @property
    def gram(self) -> np.ndarray:
        m = len(self.atoms)
        return self._gram[:m, :m]

    @property
    def reg_costs(self) -> np.ndarray:
        return np.array([a.reg_cost for a in self.atoms], dtype=np.float64)

    @property
    def baseline_index(self) -> int | None:
        for i, a in enumerate(self.atoms):
            if a.kind is AtomKind.BASELINE:
                return i
        return None

    def add(self, atom: Atom) -> int:
        col = atom_densify(atom, self.context)
        if col.size != self.size:
            raise DimensionError(f"atom densifies to {col.size} entries, working set has {self.size}")
        m = len(self.atoms)
        if m == self._cols.shape[1]:
            cols = np.empty((self.size, 2 * m))
            cols[:, :m] = self._cols
            gram = np.empty((2 * m, 2 * m))
            gram[:m, :m] = self._gram
            self._cols, self._gram = cols, gram
        self._cols[:, m] = col
        g = self._cols[:, : m + 1].T @ col
        self._gram[m, : m + 1] = g
        self._gram[: m + 1, m] = g
        self.atoms.append(atom)
        return m

    def mixture(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (len(self.atoms),):
            raise UsageError(f"{w.size} weights for a working set of {len(self.atoms)} atoms")
        if not self.atoms:
            return np.zeros(self.size)
        return self.matrix @ w

    def subset(self, keep) -> "WorkingSet":
        """New working set holding only the atoms where ``keep`` is true."""
        return WorkingSet(self.context, [a for a, k in zip(self.atoms, keep) if k])
