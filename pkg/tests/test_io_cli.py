import json
import subprocess
import sys

import numpy as np
import pytest

from colgen import io as cio
from colgen.cli import EXIT_CAP, EXIT_INPUT, EXIT_OK, main
from colgen.driver import ColgenConfig, run_colgen_ce, run_colgen_l2
from colgen.errors import FormatError
from colgen.master_ce import objective_ce
from colgen.master_l2 import objective_l2
from colgen.tensor import Atom, DenseTensor3, PointSet, atom_densify, symmetrize

V = np.array([1.0, 2.0, 2.0]) / 3.0


@pytest.fixture
def l2_file(tmp_path):
    T = DenseTensor3((3, 3, 3), 2.0 * atom_densify(Atom.sym(V), (3, 3, 3)), symmetric=True)
    path = tmp_path / "T.json"
    cio.write_tensor(path, T)
    return path


@pytest.fixture
def uniform_file(tmp_path):
    path = tmp_path / "U.json"
    cio.write_tensor(path, DenseTensor3((3, 3, 3), np.full(27, 1.0 / 27), symmetric=True))
    return path


def run_args(tmp_path, tag="r"):
    return ["--out", str(tmp_path / f"{tag}.json"), "--trace", str(tmp_path / f"{tag}.csv")]


def test_tensor_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    data = np.concatenate([rng.standard_normal(20) * 10.0 ** rng.integers(-300, 300, 20),
                           [0.1, 1 / 3, 5e-324, -0.0, 1.7976931348623157e308, 2.0**-1074]])
    T = DenseTensor3((2, 13, 1), data)
    cio.write_tensor(tmp_path / "a.json", T)
    back = cio.read_tensor(tmp_path / "a.json")
    assert back.dims == (2, 13, 1)
    assert back.data.tobytes() == data.tobytes()
    cio.write_tensor(tmp_path / "b.json", back)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_format_real_rejects_non_finite():
    with pytest.raises(FormatError):
        cio.format_real(float("nan"))
    assert float(cio.format_real(0.1)) == 0.1


@pytest.mark.parametrize(
    "doc, needle",
    [
        ({"dims": [2, 2], "data": [0.0] * 4}, "dims"),
        ({"dims": [1, 1, 2], "data": [0.0]}, "data"),
        ({"dims": [1, 1, 2], "data": [0.0, "x"]}, "data'[1]"),
        ({"data": [0.0]}, "missing field 'dims'"),
        ({"dims": [1, 1, 1], "data": [0.0], "symmetric": "yes"}, "symmetric"),
        ([1, 2], "top level"),
    ],
)
def test_tensor_field_diagnostics(tmp_path, doc, needle):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match=None) as exc:
        cio.read_tensor(path)
    assert needle in str(exc.value)


def test_truncated_json_names_byte_offset(tmp_path, l2_file, capsys):
    text = l2_file.read_text()
    bad = tmp_path / "cut.json"
    bad.write_text(text[:50])
    with pytest.raises(FormatError, match=r"byte offset \d+ \(line 4"):
        cio.read_tensor(bad)
    assert main(["solve-l2", "--input", str(bad), "--ell", "0.1", *run_args(tmp_path)]) == EXIT_INPUT
    assert "byte offset" in capsys.readouterr().err


def test_points_csv(tmp_path):
    good = tmp_path / "p.csv"
    good.write_text("position,weight\n0.5,1\n-1.25,2.5\n")
    pts = cio.read_points(good)
    assert pts.positions.tolist() == [0.5, -1.25] and pts.weights.tolist() == [1.0, 2.5]
    for body, needle in [("pos,w\n1,1\n", "line 1"), ("position,weight\n1,1\n2,x\n", "line 3"),
                         ("position,weight\n1,1,1\n", "line 2"), ("position,weight\n1,-1\n", "line 2"),
                         ("position,weight\n", "no points")]:
        bad = tmp_path / "bad.csv"
        bad.write_text(body)
        with pytest.raises(FormatError, match=needle):
            cio.read_points(bad)


def test_solve_l2_example(tmp_path, l2_file):
    assert main(["solve-l2", "--input", str(l2_file), "--ell", "0.1", *run_args(tmp_path)]) == EXIT_OK
    doc = cio.read_result(tmp_path / "r.json")
    assert doc["objective"] == pytest.approx(0.195, abs=1e-9)
    assert doc["family"] == "one" and doc["termination"] == "certified"
    assert doc["certificate"]["restarts"] == 10
    assert all(a["weight"] >= 0 for a in doc["atoms"])
    rows = cio.read_csv(tmp_path / "r.csv")
    assert tuple(rows[0]) == cio.TRACE_COLUMNS
    assert rows[-1]["terminated"] == "certified"


def test_solve_ce_uniform_example(tmp_path, uniform_file):
    assert main(["solve-ce", "--input", str(uniform_file), "--ell-a", "0.1", *run_args(tmp_path)]) == EXIT_OK
    doc = cio.read_result(tmp_path / "r.json")
    assert len(doc["atoms"]) == 1
    assert doc["atoms"][0]["kind"] == "baseline" and doc["atoms"][0]["weight"] == 1.0


def test_solve_ce_rejects_non_distribution(tmp_path, capsys):
    path = tmp_path / "T.json"
    cio.write_tensor(path, DenseTensor3((2, 2, 2), np.full(8, 0.2), symmetric=True))
    assert main(["solve-ce", "--input", str(path), "--ell-a", "0.1", *run_args(tmp_path)]) == EXIT_INPUT
    assert "not a distribution" in capsys.readouterr().err


def test_non_symmetric_without_flag(tmp_path):
    path = tmp_path / "T.json"
    cio.write_tensor(path, DenseTensor3((2, 2, 2), np.arange(8.0)))
    assert main(["solve-l2", "--input", str(path), "--ell", "0.1", *run_args(tmp_path)]) == EXIT_INPUT
    assert main(["solve-l2", "--input", str(path), "--ell", "0.1", "--nonsym", *run_args(tmp_path)]) == EXIT_OK


def test_usage_errors_and_missing_files(tmp_path):
    assert main([]) == EXIT_INPUT
    assert main(["solve-l2", "--ell", "0.1"]) == EXIT_INPUT
    assert main(["solve-l2", "--input", str(tmp_path / "nope.json"), "--ell", "0.1", *run_args(tmp_path)]) == EXIT_INPUT


def test_iteration_cap_exit_code(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "T.json"
    cio.write_tensor(path, DenseTensor3((5, 5, 5), symmetrize(rng.standard_normal((5, 5, 5))).reshape(-1), True))
    args = ["solve-l2", "--input", str(path), "--ell", "0.01", "--max-iters", "1", *run_args(tmp_path)]
    assert main(args) == EXIT_CAP
    assert cio.read_result(tmp_path / "r.json")["termination"] == "iteration_cap"


def test_fit_gmm_and_reconstruction(tmp_path):
    pos = np.linspace(-4, 4, 41)
    w = np.exp(-0.5 * (pos - 1.0) ** 2)
    lines = ["position,weight"] + [f"{float(p)!r},{float(x)!r}" for p, x in zip(pos, w)]
    (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
    args = ["fit-gmm", "--points", str(tmp_path / "p.csv"), "--sigma", "1", "--ell-a", "0.05", *run_args(tmp_path)]
    assert main(args) == EXIT_OK
    doc = cio.read_result(tmp_path / "r.json")
    pts = PointSet(pos, w)
    model = cio.reconstruct(doc, pts)
    wts = np.array([a["weight"] for a in doc["atoms"]])
    expected = -(w / w.sum()) @ np.log(model) + 0.05 * sum(
        a["weight"] for a in doc["atoms"] if a["kind"] != "baseline")
    assert doc["objective"] == pytest.approx(expected, abs=1e-8)
    assert wts.sum() == pytest.approx(1.0, abs=1e-10)


def test_result_reconstruction_matches_objective_l2(tmp_path):
    rng = np.random.default_rng(8)
    T = DenseTensor3((4, 4, 4), symmetrize(rng.standard_normal((4, 4, 4))).reshape(-1), True)
    cfg = ColgenConfig(reg=0.2)
    result = run_colgen_l2(T, cfg)
    cio.write_result(tmp_path / "r.json", cio.result_document(result, cfg))
    doc = cio.read_result(tmp_path / "r.json")
    model = cio.reconstruct(doc, T.dims)
    r = T.data - model
    total = 0.5 * r @ r + 0.2 * sum(a["weight"] for a in doc["atoms"])
    assert doc["objective"] == pytest.approx(total, abs=1e-8)


def test_trace_objectives_match_reevaluation():
    rng = np.random.default_rng(4)
    T = DenseTensor3((4, 4, 4), symmetrize(rng.standard_normal((4, 4, 4))).reshape(-1), True)
    gaps = []
    run_colgen_l2(T, ColgenConfig(reg=0.2),
                  callback=lambda e, s, ws: gaps.append(abs(e.objective - objective_l2(T.data, ws, s.weights))))
    v = rng.dirichlet(np.ones(4))
    P = DenseTensor3((4, 4, 4), 0.9 * atom_densify(Atom.sym(v), (4, 4, 4)) + 0.1 / 64, True)
    run_colgen_ce(P, ColgenConfig(family="two", reg=0.05),
                  callback=lambda e, s, ws: gaps.append(abs(e.objective - objective_ce(P.data, ws, s.weights))))
    assert max(gaps) <= 1e-8


def test_cli_outputs_are_deterministic(tmp_path, l2_file):
    for tag in ("a", "b"):
        args = ["solve-l2", "--input", str(l2_file), "--ell", "0.05", "--seed", "3", "--no-timing",
                *run_args(tmp_path, tag)]
        assert main(args) == EXIT_OK
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_bench_subcommand_writes_three_files(tmp_path):
    out = tmp_path / "bench"
    args = ["bench", "--family", "one", "--instances", "1", "--regs", "1.0", "--out-dir", str(out),
            "--jobs", "1", "--no-timing"]
    assert main(args) == EXIT_OK
    summary = cio.read_csv(out / "summary.csv")
    assert len(summary) == 1 and summary[0]["termination"] == "certified"
    trace = cio.read_csv(out / "trace.csv")
    assert trace[-1]["terminated"] == "certified"
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["family"] == "one" and "noise_model" in meta


def test_module_entry_point(tmp_path, l2_file):
    proc = subprocess.run([sys.executable, "-m", "colgen", "solve-l2", "--input", str(l2_file), "--ell", "0.1",
                           *run_args(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
