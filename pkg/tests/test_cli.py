import json

import numpy as np
import pytest

from anisotv.cli import main
from anisotv.io import load_dataset


def write(path, text):
    path.write_text(text)
    return str(path)


def run(*args):
    return main([str(a) for a in args])


def test_denoise_two_pixel_signal(tmp_path):
    src = write(tmp_path / "s.csv", "0\n2\n")
    assert run("denoise", src, "--alpha", 0.5, "--out", tmp_path / "o") == 0
    u = load_dataset(tmp_path / "o" / "s_denoised.csv").values
    np.testing.assert_allclose(u, [0.5, 1.5], atol=1e-12)
    meta = json.loads((tmp_path / "o" / "s_denoised.json").read_text())
    assert meta["alpha"] == 0.5 and meta["gap"] <= 1e-9 and meta["tv"] == pytest.approx(1.0)
    ps = [row["p"] for row in meta["lp_norms"]]
    assert ps[-1] == "inf" and all(r["norm_u"] <= r["norm_f"] + 1e-9 for r in meta["lp_norms"])


def test_denoise_constant_image(tmp_path):
    src = write(tmp_path / "c.pgm", "P2\n3 2\n255\n7 7 7\n7 7 7\n")
    assert run("denoise", src, "--alpha", 3, "--out", tmp_path, "--quantize") == 0
    assert load_dataset(tmp_path / "c_denoised.pgm").values.tolist() == [7.0] * 6
    meta = json.loads((tmp_path / "c_denoised.json").read_text())
    assert meta["gap"] == 0.0


def test_denoise_graph_and_tensor(tmp_path):
    src = write(tmp_path / "g.graph", "2 1\n1 0\n1 2\n0 1 1\n")
    assert run("denoise", src, "--alpha", 0.5, "--out", tmp_path) == 0
    np.testing.assert_allclose(load_dataset(tmp_path / "g_denoised.graph").values, [0.5, 1.5])
    src = write(tmp_path / "t.t", "2\n2 2\n1 1\n0 1 2 3\n")
    assert run("denoise", src, "--alpha", 0.1, "--out", tmp_path) == 0
    assert load_dataset(tmp_path / "t_denoised.t").shape == (2, 2)


def test_audit_is_byte_identical(tmp_path):
    src = write(tmp_path / "im.csv", "0,1,3\n2,5,1\n4,0,2\n")
    for d in ("a", "b"):
        assert run("audit", src, "--alpha", 0.4, "--seed", 5, "--samples", 30, "--out", tmp_path / d) == 0
    for name in ("im_audit.json", "im_audit.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "im_audit.json").read_text())
    assert report["passed"] and report["seed"] == 5


def test_config_file_and_override(tmp_path):
    src = write(tmp_path / "s.csv", "0\n2\n")
    cfg = write(tmp_path / "run.cfg", "alpha = 2\nout = {}\n".format(tmp_path / "cfgout"))
    assert run("denoise", src, "--config", cfg) == 0
    np.testing.assert_allclose(load_dataset(tmp_path / "cfgout" / "s_denoised.csv").values, [1, 1])
    assert run("denoise", src, "--config", cfg, "--alpha", 0.5) == 0
    np.testing.assert_allclose(load_dataset(tmp_path / "cfgout" / "s_denoised.csv").values, [0.5, 1.5])


def test_refine_study(tmp_path, rng):
    vals = rng.uniform(0, 1, (8, 8))
    src = write(tmp_path / "r.csv", "\n".join(",".join(repr(float(v)) for v in row) for row in vals) + "\n")
    assert run("refine-study", src, "--alpha", 0.2, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "r_refine.json").read_text())
    assert report["monotone"] and report["consistent"]
    assert (tmp_path / "r_refine.csv").read_text().startswith("m,cells")


def test_cone_check(tmp_path):
    src = write(tmp_path / "g.graph", "3 2\n1\n1\n1\n0 1 1\n1 2 2\n")
    assert run("cone-check", src, "--alpha", 1, "--points", 3, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "g_cone.json").read_text())["all_hold"]
    seg = write(tmp_path / "seg.poly", "0,0\n1,1\n")
    assert run("cone-check", seg, "--points", 2, "--out", tmp_path) == 4
    assert not json.loads((tmp_path / "seg_cone.json").read_text())["all_hold"]


def test_exit_codes_and_cleanup(tmp_path, capsys):
    bad = write(tmp_path / "bad.pgm", "P2\n2 2\n70000\n0 1 2 3\n")
    assert run("denoise", bad, "--out", tmp_path / "o") == 2
    assert "maxval" in capsys.readouterr().err
    src = write(tmp_path / "im.csv", "0,9\n4,1\n")
    out = tmp_path / "nc"
    assert run("denoise", src, "--alpha", 5, "--max-iter", 1, "--out", out) == 3
    assert not out.exists() or not any(out.iterdir())
    assert run("audit", src, "--probes", "nope", "--out", out) == 2
    assert run("denoise", src, "--config", tmp_path / "missing.cfg") == 2
    assert run("refine-study", write(tmp_path / "p.poly", "1,2\n"), "--out", out) == 2


def test_audit_violation_exit_code(tmp_path, monkeypatch):
    import anisotv.cli as cli
    from anisotv.rof import RofSolution

    def wrong(g, f, alpha, tol=1e-9, max_iter=0, **kw):
        return RofSolution(np.asarray(f, float).copy(), np.zeros(g.n_edges), 0.0, 0, alpha)

    monkeypatch.setattr("anisotv.minimality.solve_rof", wrong)
    src = write(tmp_path / "s.csv", "0\n2\n5\n")
    assert cli.main(["audit", src, "--alpha", "0.5", "--out", str(tmp_path)]) == 4
    report = json.loads((tmp_path / "s_audit.json").read_text())
    assert not report["passed"]


def test_invariant_exit_code(tmp_path, monkeypatch):
    import anisotv.cli as cli
    from anisotv.errors import InvariantError

    def broken(*args, **kwargs):
        raise InvariantError("boom")

    monkeypatch.setattr(cli, "refinement_study", broken)
    src = write(tmp_path / "s.csv", "0\n2\n5\n")
    assert cli.main(["refine-study", src, "--out", str(tmp_path)]) == 5
