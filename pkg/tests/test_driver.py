import numpy as np
import pytest

from colgen.driver import (
    CERTIFIED,
    ITERATION_CAP,
    ColgenConfig,
    active_atoms,
    gt_basis_derivative,
    posthoc_best_score,
    run_colgen_ce,
    run_colgen_l2,
)
from colgen.errors import ParameterError, UsageError
from colgen.master_ce import relaxed_objective_ce
from colgen.pricing import PricingConfig
from colgen.tensor import Atom, AtomKind, DenseTensor3, PointSet, atom_densify, symmetrize

V = np.array([1.0, 2.0, 2.0]) / 3.0


def sym_tensor(arr):
    return DenseTensor3(arr.shape, arr.reshape(-1), symmetric=True)


def test_config_validation():
    with pytest.raises(ParameterError):
        ColgenConfig(family="three")
    with pytest.raises(ParameterError):
        ColgenConfig(reg=-1.0)
    with pytest.raises(ParameterError):
        ColgenConfig(oracle="newton")


def test_zero_target_certifies_at_once():
    r = run_colgen_l2(sym_tensor(np.zeros((3, 3, 3))), ColgenConfig(reg=0.1))
    assert r.termination == CERTIFIED
    assert len(r.trace) == 1 and r.trace[0].iteration == 0
    assert len(r.working_set) == 0


def test_scaled_rank1_example():
    T = sym_tensor(2.0 * atom_densify(Atom.sym(V), (3, 3, 3)).reshape(3, 3, 3))
    r = run_colgen_l2(T, ColgenConfig(reg=0.1))
    assert r.certified
    assert r.solution.objective == pytest.approx(0.195, abs=1e-9)
    (atom, w), = active_atoms(r)
    assert w == pytest.approx(1.9, abs=1e-8)
    assert abs(atom.factors[0] @ V) == pytest.approx(1.0, abs=1e-8)


def test_non_symmetric_input_needs_flag():
    arr = np.random.default_rng(0).standard_normal((2, 3, 4))
    T = DenseTensor3(arr.shape, arr.reshape(-1))
    with pytest.raises(UsageError):
        run_colgen_l2(T)
    r = run_colgen_l2(T, ColgenConfig(reg=0.5, nonsym=True))
    assert r.certified
    assert all(a.kind is AtomKind.NONSYM_RANK1 for a in r.working_set)


@pytest.mark.parametrize("seed", range(3))
def test_l2_objective_monotone_and_certificate(seed):
    rng = np.random.default_rng(seed)
    T = sym_tensor(symmetrize(rng.standard_normal((4, 4, 4))))
    cfg = ColgenConfig(reg=0.5)
    r = run_colgen_l2(T, cfg)
    objs = [e.objective for e in r.trace]
    assert np.all(np.diff(objs) <= 1e-10)
    assert r.certified
    assert posthoc_best_score(r, cfg) <= cfg.reg + 1e-6
    assert r.certificate["best_score"] <= r.certificate["threshold"] + cfg.eps_viol


def test_iteration_cap_reported():
    rng = np.random.default_rng(1)
    T = sym_tensor(symmetrize(rng.standard_normal((5, 5, 5))))
    r = run_colgen_l2(T, ColgenConfig(reg=0.01, max_iters=1))
    assert r.termination == ITERATION_CAP
    assert r.trace[-1].terminated == ITERATION_CAP


def test_callback_sees_every_round_and_gt_derivative_positive_early():
    v1 = np.array([1.0, 0.0, 0.0, 0.0])
    v2 = np.array([0.0, 0.6, 0.8, 0.0])
    gt = [Atom.sym(v1), Atom.sym(v2)]
    arr = sum(c * atom_densify(a, (4, 4, 4)) for c, a in zip((0.7, 0.3), gt)).reshape(4, 4, 4)
    seen = []
    r = run_colgen_l2(sym_tensor(arr), ColgenConfig(reg=1e-3),
                      callback=lambda e, sol, ws: seen.append(gt_basis_derivative(sol, gt, 1e-3).max()))
    assert len(seen) == len(r.trace)
    assert seen[0] > 0
    assert seen[-1] <= 1e-6


def test_uniform_ce_target_is_baseline_only():
    T = sym_tensor(np.full((3, 3, 3), 1.0 / 27))
    r = run_colgen_ce(T, ColgenConfig(family="two", reg=0.1))
    assert r.certified
    (atom, w), = active_atoms(r)
    assert atom.kind is AtomKind.BASELINE and w == pytest.approx(1.0)
    assert r.solution.objective == pytest.approx(np.log(27), abs=1e-10)


def test_point_mass_ce_target():
    arr = np.zeros((3, 3, 3))
    arr[1, 1, 1] = 1.0
    r = run_colgen_ce(sym_tensor(arr), ColgenConfig(family="two", reg=0.01))
    assert r.certified
    assert r.solution.objective == pytest.approx(0.01, abs=1e-6)
    top = max(active_atoms(r), key=lambda p: p[1])[0]
    assert int(np.argmax(top.factors[0])) == 1


def test_ce_trace_relaxed_objective_and_monotone():
    rng = np.random.default_rng(3)
    v = [rng.dirichlet(np.ones(4)) for _ in range(2)]
    arr = (0.6 * atom_densify(Atom.sym(v[0]), (4, 4, 4)) + 0.4 * atom_densify(Atom.sym(v[1]), (4, 4, 4)))
    T = sym_tensor(arr.reshape(4, 4, 4))
    r = run_colgen_ce(T, ColgenConfig(family="two", reg=0.05))
    assert r.certified
    objs = [e.objective for e in r.trace]
    assert np.all(np.diff(objs) <= 1e-10)
    for e in r.trace:
        assert abs(e.relaxed_objective - e.objective) <= 1e-10
    last = relaxed_objective_ce(T.data, r.solution.weights, r.working_set, r.cuts)
    assert last == pytest.approx(r.solution.objective, abs=1e-10)
    assert r.working_set[r.working_set.baseline_index].kind is AtomKind.BASELINE


def test_gmm_recovers_two_components():
    rng = np.random.default_rng(0)
    pos = np.linspace(-6.0, 6.0, 121)
    dens = 0.5 * np.exp(-0.5 * (pos - 2.0) ** 2) + 0.5 * np.exp(-0.5 * (pos + 3.0) ** 2)
    pts = PointSet(pos, dens + 1e-3 * rng.random(pos.size))
    r = run_colgen_ce(pts, ColgenConfig(family="two", reg=0.01, sigma=1.0))
    assert r.certified
    comps = [(a.mu, w) for a, w in active_atoms(r) if a.kind is AtomKind.GAUSSIAN]
    for side, target in ((lambda m: m < 0, -3.0), (lambda m: m > 0, 2.0)):
        mu = np.array([m for m, _ in comps if side(m)])
        w = np.array([x for m, x in comps if side(m)])
        assert w.sum() > 0.2
        assert (mu @ w) / w.sum() == pytest.approx(target, abs=0.05)
    with pytest.raises(ParameterError):
        run_colgen_ce(pts, ColgenConfig(family="two", reg=0.01))


def test_timing_off_gives_identical_traces():
    rng = np.random.default_rng(5)
    T = sym_tensor(symmetrize(rng.standard_normal((4, 4, 4))))
    cfg = ColgenConfig(reg=0.3, timing=False, pricing=PricingConfig(seed=3))
    a, b = run_colgen_l2(T, cfg), run_colgen_l2(T, cfg)
    assert a.trace == b.trace
    assert all(e.elapsed_s == 0.0 for e in a.trace)


def test_warm_start_reaches_same_objective():
    T = sym_tensor(2.0 * atom_densify(Atom.sym(V), (3, 3, 3)).reshape(3, 3, 3))
    r = run_colgen_l2(T, ColgenConfig(reg=0.1), warm_set=[Atom.sym(V)])
    assert r.solution.objective == pytest.approx(0.195, abs=1e-9)
    assert len(r.trace) == 1
