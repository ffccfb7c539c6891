"""Synthetic symmetric-tensor instances and the benchmark protocol.

Family One instances are convex combinations of ``v v v`` with sparse unit
``v`` plus symmetrized Gaussian noise whose Frobenius norm is a fixed fraction
of the signal norm.  Family Two instances use sparse probability vectors and
mix in a uniform component of the given fraction, so the target stays a
distribution.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .driver import ColgenConfig, gt_basis_derivative, run_colgen_ce, run_colgen_l2
from .errors import ValidationError
from .master_ce import cross_entropy
from .tensor import Atom, DenseTensor3, atom_densify, symmetrize

GT_SMOOTHING = 1e-5
DEFAULT_REGS = (0.1, 0.4, 0.7, 1.0)
FULL_SIZES_L2 = (30, 35, 40, 45)
FULL_SIZE_CE = 20
NOISE_MODEL = {
    "one": "symmetrized iid Gaussian noise scaled to (noise fraction) x ||signal||_F",
    "two": "uniform distribution mixed in with weight (noise fraction), then renormalized",
}


@dataclass(frozen=True)
class InstanceSpecL2:
    n: int
    rank: int
    nnz: int
    noise: float
    seed: int
    full_scale: bool = False

    def __post_init__(self):
        _check_common(self)
        if self.full_scale:
            if self.n not in FULL_SIZES_L2:
                raise ValidationError(f"full-scale size must be one of {FULL_SIZES_L2}, got {self.n}")
            _check_range("rank", self.rank, 3, 10)
            _check_range("nnz", self.nnz, 6, 15)
            _check_range("noise", self.noise, 0.01, 0.20)


@dataclass(frozen=True)
class InstanceSpecCE:
    n: int
    rank: int
    nnz: int
    noise: float
    seed: int
    full_scale: bool = False

    def __post_init__(self):
        _check_common(self)
        if self.full_scale:
            if self.n != FULL_SIZE_CE:
                raise ValidationError(f"full-scale size must be {FULL_SIZE_CE}, got {self.n}")
            _check_range("rank", self.rank, 3, 10)
            _check_range("nnz", self.nnz, 4, 6)
            _check_range("noise", self.noise, 0.01, 0.20)


def _check_range(name, value, lo, hi):
    if not lo <= value <= hi:
        raise ValidationError(f"{name}={value} outside [{lo}, {hi}]")


def _check_common(spec):
    if spec.n < 1 or spec.rank < 1:
        raise ValidationError("n and rank must be positive")
    if not 1 <= spec.nnz <= spec.n:
        raise ValidationError(f"nnz={spec.nnz} must lie in [1, n={spec.n}]")
    if not 0.0 <= spec.noise < 1.0:
        raise ValidationError(f"noise fraction {spec.noise} must lie in [0, 1)")
    if spec.nnz == 1 and spec.rank > spec.n:
        # single-entry factors: only n distinct directions exist
        raise ValidationError(f"rank={spec.rank} unique one-hot factors need n >= rank")


@dataclass
class Instance:
    """A generated target with the model that produced it (for evaluation only)."""

    spec: InstanceSpecL2 | InstanceSpecCE
    tensor: DenseTensor3
    atoms: list[Atom]
    weights: np.ndarray
    signal: np.ndarray

    def ground_truth_objective(self, reg: float) -> float:
        """Objective of the generating model, priced at regularization ``reg``."""
        if isinstance(self.spec, InstanceSpecL2):
            r = self.tensor.data - self.signal
            return 0.5 * float(r @ r) + reg * float(self.weights.sum())
        return ground_truth_cross_entropy(self) + reg * float(self.weights.sum())


def ground_truth_cross_entropy(instance: Instance, smoothing: float = GT_SMOOTHING) -> float:
    """Cross entropy of the target against the generating model plus ``smoothing`` per cell.

    The smoothed model is not renormalized, so it sums to slightly more than one.
    """
    return cross_entropy(instance.tensor, instance.signal + smoothing)


def _sparse_support(rng, n, nnz):
    return np.sort(rng.choice(n, size=nnz, replace=False))


def _unique(vectors, v):
    return all(abs(float(u @ v)) < 1.0 - 1e-9 * float(np.linalg.norm(u) * np.linalg.norm(v)) for u in vectors)


def gen_instance_l2(spec: InstanceSpecL2) -> Instance:
    rng = np.random.default_rng(spec.seed)
    weights = rng.dirichlet(np.ones(spec.rank))
    vectors = []
    while len(vectors) < spec.rank:
        v = np.zeros(spec.n)
        v[_sparse_support(rng, spec.n, spec.nnz)] = rng.standard_normal(spec.nnz)
        v /= np.linalg.norm(v)
        if _unique(vectors, v):
            vectors.append(v)
    atoms = [Atom.sym(v) for v in vectors]
    dims = (spec.n,) * 3
    signal = np.zeros(spec.n**3)
    for lam, a in zip(weights, atoms):
        signal += lam * atom_densify(a, dims)
    data = signal
    if spec.noise > 0:
        g = symmetrize(rng.standard_normal(dims)).reshape(-1)
        g *= spec.noise * np.linalg.norm(signal) / np.linalg.norm(g)
        data = signal + g
    return Instance(spec, DenseTensor3(dims, data, symmetric=True), atoms, weights, signal)


def gen_instance_ce(spec: InstanceSpecCE) -> Instance:
    rng = np.random.default_rng(spec.seed)
    weights = rng.dirichlet(np.ones(spec.rank))
    vectors = []
    while len(vectors) < spec.rank:
        v = np.zeros(spec.n)
        v[_sparse_support(rng, spec.n, spec.nnz)] = rng.dirichlet(np.ones(spec.nnz))
        if _unique(vectors, v):
            vectors.append(v)
    atoms = [Atom.sym(v) for v in vectors]
    dims = (spec.n,) * 3
    signal = np.zeros(spec.n**3)
    for lam, a in zip(weights, atoms):
        signal += lam * atom_densify(a, dims)
    data = (1.0 - spec.noise) * signal + spec.noise / signal.size
    data = data / data.sum()
    return Instance(spec, DenseTensor3(dims, data, symmetric=True), atoms, weights, signal)


# ---------------------------------------------------------------- protocol


@dataclass(frozen=True)
class BenchPreset:
    name: str
    family: str
    instances: int
    time_limit_s: float
    regs: tuple = DEFAULT_REGS
    sizes: tuple = ()
    rank: tuple = (3, 10)
    nnz: tuple = (6, 15)
    noise: tuple = (0.01, 0.20)
    full_scale: bool = False

    def sample(self, rng: np.random.Generator, seed: int):
        cls = InstanceSpecL2 if self.family == "one" else InstanceSpecCE
        n = int(rng.choice(self.sizes))
        return cls(
            n=n,
            rank=int(rng.integers(self.rank[0], self.rank[1] + 1)),
            nnz=min(n, int(rng.integers(self.nnz[0], self.nnz[1] + 1))),
            noise=float(rng.uniform(*self.noise)),
            seed=seed,
            full_scale=self.full_scale,
        )


PRESETS = {
    ("one", "paper"): BenchPreset("paper", "one", 9000, 300.0, sizes=FULL_SIZES_L2, full_scale=True),
    ("two", "paper"): BenchPreset(
        "paper", "two", 750, 300.0, sizes=(FULL_SIZE_CE,), nnz=(4, 6), full_scale=True
    ),
    ("one", "desk"): BenchPreset("desk", "one", 8, 60.0, sizes=(10, 12, 15), rank=(2, 4), nnz=(3, 6)),
    ("two", "desk"): BenchPreset("desk", "two", 4, 60.0, sizes=(8, 10), rank=(2, 3), nnz=(3, 4)),
}


def sample_specs(family: str, preset: str, instances: int | None, seed: int):
    p = PRESETS[(family, preset)]
    rng = np.random.default_rng(seed)
    count = p.instances if instances is None else instances
    return [p.sample(rng, seed * 1_000_003 + i) for i in range(count)]


TRACE_FIELDS = (
    "instance", "reg", "iteration", "elapsed_s", "objective", "ws_size", "active",
    "best_score", "threshold", "cuts_added", "terminated", "gt_deriv_max", "gt_deriv_mean",
)
SUMMARY_FIELDS = (
    "instance", "seed", "n", "rank", "nnz", "noise", "reg", "termination", "iterations",
    "time_s", "objective", "gt_objective", "normalized_loss", "gt_deriv_max",
    "gt_deriv_mean", "error",
)


@dataclass
class BenchRun:
    """Trace rows and the summary row of one (instance, reg) job."""

    trace: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def run_instance(instance_id: int, spec, reg: float, config: ColgenConfig) -> BenchRun:
    """Generate, solve and evaluate one instance; failures become an error summary."""
    out = BenchRun()
    base = {"instance": instance_id, "seed": spec.seed, "n": spec.n, "rank": spec.rank,
            "nnz": spec.nnz, "noise": spec.noise, "reg": reg}
    try:
        family = "one" if isinstance(spec, InstanceSpecL2) else "two"
        inst = gen_instance_l2(spec) if family == "one" else gen_instance_ce(spec)
        cfg = replace(config, family=family, reg=reg)

        def record(event, sol, ws):
            d = gt_basis_derivative(sol, inst.atoms, reg)
            row = {"instance": instance_id, "reg": reg}
            row.update({k: v for k, v in asdict(event).items() if k in TRACE_FIELDS})
            row["gt_deriv_max"] = float(d.max())
            row["gt_deriv_mean"] = float(d.mean())
            out.trace.append(row)

        runner = run_colgen_l2 if family == "one" else run_colgen_ce
        result = runner(inst.tensor, cfg, callback=record)
        gt = inst.ground_truth_objective(reg)
        last = out.trace[-1]
        out.summary = dict(base, termination=result.termination, iterations=last["iteration"],
                           time_s=last["elapsed_s"], objective=last["objective"], gt_objective=gt,
                           normalized_loss=last["objective"] - gt, gt_deriv_max=last["gt_deriv_max"],
                           gt_deriv_mean=last["gt_deriv_mean"], error="")
    except Exception as exc:  # recorded, the benchmark keeps going
        out.summary = dict(base, termination="error", error=f"{type(exc).__name__}: {exc}")
    return out


def _job(args):
    return run_instance(*args)


def run_bench(family: str, specs, regs=DEFAULT_REGS, config: ColgenConfig | None = None, jobs: int = 1):
    """Run every (instance, reg) pair and yield :class:`BenchRun` in input order.

    Jobs are independent; with ``jobs > 1`` they run in a process pool but are
    yielded in the same order as a sequential run.
    """
    config = config or ColgenConfig(family=family)
    tasks = [(i, spec, float(reg), config) for i, spec in enumerate(specs) for reg in regs]
    if jobs <= 1 or len(tasks) <= 1:
        for t in tasks:
            yield run_instance(*t)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_job, tasks)


def default_jobs() -> int:
    return os.cpu_count() or 1


def not_terminated_average(traces, times, key: str = "objective") -> np.ndarray:
    """Mean of ``key`` at each time over runs that have not terminated yet.

    ``traces`` maps a run id to its trace rows (each with ``elapsed_s`` and
    ``key``).  A run counts at time ``t`` while its final timestamp exceeds
    ``t``; its value is the latest row at or before ``t``.  Times where no run
    qualifies give NaN.
    """
    out = []
    for t in times:
        vals = []
        for rows in traces.values():
            if not rows or rows[-1]["elapsed_s"] <= t:
                continue
            seen = [r for r in rows if r["elapsed_s"] <= t]
            if seen:
                vals.append(seen[-1][key])
        out.append(float(np.mean(vals)) if vals else float("nan"))
    return np.array(out)
