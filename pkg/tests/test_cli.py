import hashlib
import json
import subprocess
import sys
from pathlib import Path

from helmsource.cli import RunManifest, main
from helmsource.forward import CauchyData
from helmsource.mesh_fem import load_field, load_mesh

TWO = {"locations": [[0.35, 0.4], [0.65, 0.62]], "strengths": [0.9, 0.6]}


def _cfg(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _manifest(out):
    return RunManifest.read(out / "manifest.json")


def _digest(paths):
    return {p: hashlib.sha256(open(p, "rb").read()).hexdigest() for p in paths}


def test_unknown_subcommand():
    assert main(["conjure"]) == 64
    assert main([]) == 64


def test_unreadable_config(tmp_path):
    out = tmp_path / "o"
    assert main(["eval-bounds", "-c", str(tmp_path / "missing.json"), "-o", str(out)]) == 66
    assert _manifest(out).status == "failed"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["eval-bounds", "-c", str(bad), "-o", str(out)]) == 66


def test_schema_violation(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "c.json", {"constants": {}, "measured": {"m": 2}, "surprise": 1})
    assert main(["eval-bounds", "-c", cfg, "-o", str(out)]) == 2
    m = _manifest(out)
    assert m.exit_code == 2 and "surprise" in m.message
    assert main(["noise-sweep", "-o", str(out), "-c",
                 _cfg(tmp_path, "s.json", {"realizations": 0})]) == 2
    assert main(["eval-bounds", "--seed", "4", "-o", str(out)]) == 2


def test_eval_bounds_toy(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "b.json", {"constants": {"c1": 1.0}, "measured": {
        "m": 2, "sigma": 0.5, "diam": 2 ** 0.5, "lambda_min": 0.5, "g_misfit": 0.01}})
    assert main(["eval-bounds", "-c", cfg, "-o", str(out)]) == 0
    got = json.loads((out / "bounds.json").read_text())["loc_bound"]
    assert abs(got - (2 * 2 ** 1.5 * 0.01 / 0.25) ** 0.5) <= 1e-12
    m = _manifest(out)
    assert m.status == "ok" and str(out / "bounds.json") in m.outputs


def test_precondition_violation_is_a_validation_error(tmp_path):
    cfg = _cfg(tmp_path, "b.json", {"measured": {"m": 2, "sigma": 0, "diam": 1, "lambda_min": 1}})
    assert main(["eval-bounds", "-c", cfg, "-o", str(tmp_path / "o")]) == 2


def test_fd_check_and_flags(tmp_path, monkeypatch):
    out = tmp_path / "o"
    monkeypatch.setenv("HELMSOURCE_MESH_FINE", "12")
    assert main(["fd-check", "--seed", "5", "--workers", "3", "-o", str(out)]) == 0
    res = json.loads((out / "fd_check.json").read_text())
    assert res["N"] == 12 and res["medium_pass"] and res["source_pass"]
    m = _manifest(out)
    assert m.seeds == {"fd": 5} and m.workers == 3


def test_numerical_failure_exit_code(tmp_path):
    cfg = _cfg(tmp_path, "f.json", {"N": 12, "configs": 1, "tol": 1e-30})
    assert main(["fd-check", "-c", cfg, "-o", str(tmp_path / "o")]) == 3


def test_verify_rg(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "r.json", {"N": 64, "sources": TWO, "zeros": [[0.5, 0.5]]})
    assert main(["verify-rg", "-c", cfg, "-o", str(out)]) == 0
    rep = json.loads((out / "rg_report.json").read_text())[0]
    assert rep["rel_error"] < 0.05 and rep["zeros"] == [[0.5, 0.5]]


def test_synthesize_then_invert(tmp_path):
    out = tmp_path / "syn"
    cfg = _cfg(tmp_path, "s.json", {"scene": "med2", "fine_N": 128, "coarse_N": 64, "sources": TWO,
                                    "tau": 0.0, "probes": 2})
    assert main(["synthesize", "-c", cfg, "-o", str(out)]) == 0
    man = _manifest(out)
    assert all(Path(p).exists() for p in man.outputs) and len(man.outputs) >= 8
    data = CauchyData.load(out / "cauchy.csv")
    assert data.mesh.N == 64 and data.tau == 0
    mesh = load_mesh(out / "mesh")
    assert mesh.N == 64 and load_field(out / "n_true.csv").shape == (mesh.n_nodes,)

    inv = tmp_path / "inv"
    icfg = _cfg(tmp_path, "i.json", {"data": str(out / "cauchy.csv"), "medium": str(out / "n_true.csv"),
                                     "truth": str(out / "sources_true.json"),
                                     "source_config": {"m": 2, "restarts": 6}})
    before = _digest([icfg, str(out / "cauchy.csv"), str(out / "n_true.csv")])
    assert main(["invert-sources", "-c", icfg, "-o", str(inv)]) == 0
    assert _digest(list(before)) == before
    res = json.loads((inv / "sources.json").read_text())
    assert res["match_report"]["rho_x"] <= 2 / 64 and res["match_report"]["rho_lambda"] <= 0.02

    med = tmp_path / "med"
    mcfg = _cfg(tmp_path, "m.json", {"differential": str(out / "differential.json"),
                                     "medium_config": {"J": 2, "max_iters": 5}})
    assert main(["invert-medium", "-c", mcfg, "-o", str(med)]) == 0
    rep = json.loads((med / "medium_report.json").read_text())
    assert rep["iterations"] <= 5 and len(rep["probe_residuals"]) == 2
    assert load_field(med / "n_rec.csv").shape == (mesh.n_nodes,)


def test_noise_sweep_and_env_override(tmp_path, monkeypatch):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "w.json", {"scene": "med2", "sources": TWO, "noise_levels": [0.01],
                                    "realizations": 1, "source_config": {"restarts": 4}})
    monkeypatch.setenv("HELMSOURCE_REALIZATIONS", "2")
    assert main(["noise-sweep", "-c", cfg, "-o", str(out), "--mesh-fine", "64",
                 "--mesh-coarse", "32"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert summary["spec"]["fine_N"] == 64 and summary["spec"]["realizations"] == 2


def test_landscape_k5_has_one_minimum(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "l.json", {"k_values": [5.0]})
    assert main(["landscape", "-c", cfg, "-o", str(out)]) == 0
    s = json.loads((out / "landscape_summary.json").read_text())
    assert s[0]["count"] == 1
    assert (out / "landscape_k5.csv").exists() and (out / "landscape_k5.svg").exists()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "helmsource.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.strip()
