import json

import numpy as np
import pytest

from ou_spectra.canonical import m_chain3, m_kramers
from ou_spectra.cli import main
from ou_spectra.report import analyze, content_hash, csv_text, fmt


def test_fmt_roundtrips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(v)) == v


def test_csv_text_layout():
    text = csv_text(["a", "b"], [[1.0, 2.0], [0.5, np.pi]])
    assert text == "a,b\n1,0.5\n2,3.1415926535897931\n"


def test_content_hash_ignores_key_order():
    assert content_hash({"a": 1, "b": [1.0, 2.0]}) == content_hash({"b": [1.0, 2.0], "a": 1})


def test_analyze_is_deterministic():
    a, b = analyze(m_kramers()), analyze(m_kramers())
    assert a.sha256 == b.sha256
    assert a.k0 == 1 and a.chain_index == 1 and a.degenerate and not a.normal
    assert a.tau0 == pytest.approx(0.5)


def test_analyze_chain3():
    r = analyze(m_chain3(), cutoff=2.0)
    assert r.k0 == 2 and r.singular_space_dim == 0
    assert r.trB == pytest.approx(-3.0)


def _run(args):
    return main([str(a) for a in args])


def test_cli_analyze(tmp_path):
    out = tmp_path / "r.json"
    assert _run(["analyze", "--model", "M_CHAIN3", "--out", out]) == 0
    d = json.loads(out.read_text())
    assert d["k0"] == 2 and len(d["sha256"]) == 64


def test_cli_pseudospec_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    grid = "--grid=-1,3,-4,4,4,5"
    assert _run(["pseudospec", "--model", "M_KRAMERS", "--N", 8, grid, "--out", a]) == 0
    assert _run(["pseudospec", "--model", "M_KRAMERS", "--N", 8, grid, "--jobs", 2, "--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "re,im,sigma_min" and len(lines) == 21
    assert json.loads((tmp_path / "a.csv.json").read_text())["N"] == 8


def test_cli_decay_single_row(tmp_path):
    out = tmp_path / "d.csv"
    assert _run(["decay", "--model", "M_OU1", "--t-max", 0, "--out", out]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_cli_axis_fit(tmp_path):
    out = tmp_path / "x.csv"
    assert _run(["axis-fit", "--model", "M_OU1", "--N", 64, "--out", out]) == 0
    meta = json.loads((tmp_path / "x.csv.json").read_text())
    assert meta["slope"] == pytest.approx(-1.0, abs=0.1)


def test_cli_ray(tmp_path):
    out = tmp_path / "r.csv"
    assert _run(["ray", "--model", "M_ELLNN", "--N", 10, "--t", "1,3,3", "--out", out]) == 0
    assert out.read_text().startswith("t,re,im,resolvent_norm,lattice_distance\n")


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"Q": [[1, 2], [0, 1]], "B": [[-1, 0], [0, -1]]}))
    assert _run(["analyze", "--model", bad]) == 2
    unstable = tmp_path / "unstable.json"
    unstable.write_text(json.dumps({"Q": [[1, 0], [0, 1]], "B": [[1, 0], [0, -1]]}))
    assert _run(["analyze", "--model", unstable]) == 3
    assert _run(["pseudospec", "--model", "M_OU1", "--N", 1, "--grid=0,1,0,1,2,2"]) == 4
    assert _run(["entropy", "--model", "M_OU1", "--N", 10, "--mass", 2]) == 5
    assert _run(["decay", "--model", "M_OU1", "--datum", '{"M": [[-0.9]]}']) == 5
    assert _run(["analyze", "--model", tmp_path / "missing.json"]) == 2


def test_cli_entropy(tmp_path):
    out = tmp_path / "e.csv"
    assert _run(["entropy", "--model", "M_OU1", "--N", 30, "--t-max", 20, "--steps", 201, "--out", out]) == 0
    meta = json.loads((tmp_path / "e.csv.json").read_text())
    assert meta["fitted_rate"] == pytest.approx(2.0, abs=0.05)
