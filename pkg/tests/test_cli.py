import json

import numpy as np
import pytest

from emclt import cli

SMALL_STRONG = """
experiment = "strong-rate"
seed = 3
[model]
drift = "smooth-tanh"
diffusion = "sin-modulated"
[run]
ns = [4, 8, 16]
M = 8
n_paths = 200
"""


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_list_presets(capsys):
    assert cli.main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert "holder-lacunary(alpha=0.5)" in out
    assert "smooth-tanh" in out and "C^inf" in out
    assert "sobolev-bump(alpha=0.5, m=2)" in out and "compact support" in out


def test_run_writes_outputs(tmp_path):
    cfg = write(tmp_path, SMALL_STRONG)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "results.csv", "summary.json"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and man["version"] and len(man["config_sha256"]) == 64
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "n,error,se"


def test_same_config_two_directories_identical(tmp_path):
    cfg = write(tmp_path, SMALL_STRONG)
    a, b = tmp_path / "a", tmp_path / "nested" / "b"
    assert cli.main(["run", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["run", str(cfg), "--out", str(b)]) == 0
    for f in ("results.csv", "summary.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_threads_do_not_change_results(tmp_path):
    cfg = write(tmp_path, SMALL_STRONG.replace("n_paths = 200", "n_paths = 3000"))
    a, b = tmp_path / "serial", tmp_path / "threaded"
    assert cli.main(["run", str(cfg), "--out", str(a), "--threads", "1"]) == 0
    assert cli.main(["run", str(cfg), "--out", str(b), "--threads", "4"]) == 0
    ra = np.loadtxt(a / "results.csv", delimiter=",", skiprows=1)
    rb = np.loadtxt(b / "results.csv", delimiter=",", skiprows=1)
    assert np.abs(ra - rb).max() <= 1e-12


def test_env_thread_default(tmp_path, monkeypatch):
    monkeypatch.setenv("EMCLT_THREADS", "3")
    cfg = write(tmp_path, SMALL_STRONG)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["threads"] == 3


def test_rerun_from_manifest(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_STRONG)
    a = tmp_path / "a"
    assert cli.main(["run", str(cfg), "--out", str(a), "--seed", "11"]) == 0
    assert cli.main(["rerun", str(a / "manifest.json"), "--out", str(tmp_path / "r")]) == 0
    assert (a / "results.csv").read_bytes() == (tmp_path / "r" / "results.csv").read_bytes()
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["seed"] == 11
    assert "byte-for-byte" in capsys.readouterr().out


def test_seed_override_changes_results(tmp_path):
    cfg = write(tmp_path, SMALL_STRONG)
    cli.main(["run", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()


def test_malformed_ns(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_STRONG.replace("ns = [4, 8, 16]", "ns = [8, 4]"))
    out = tmp_path / "o"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 1
    assert "ns must be increasing" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("patch, path", [
    ('experiment = "nope"', "experiment"),
    ('[model]\ndrift = "nope"', "model.drift"),
    ('[run]\nns = [4, 8, 16]\nbogus = 1', "run.bogus"),
    ('[run]\nn_paths = -5', "run.n_paths"),
    ('seed = -1', "seed"),
])
def test_schema_errors_name_the_field(tmp_path, capsys, patch, path):
    text = patch if patch.startswith("experiment") else 'experiment = "strong-rate"\n' + patch
    if patch.startswith("seed"):
        text = 'experiment = "strong-rate"\nseed = -1'
    assert cli.main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 1
    assert f"config: {path}:" in capsys.readouterr().err


def test_unreadable_and_invalid_toml(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 1
    assert cli.main(["run", str(write(tmp_path, "experiment = [")), "--out", str(tmp_path / "o")]) == 1


def test_check_exit_code(tmp_path):
    strict = SMALL_STRONG + "[check]\nslope_max = -5.0\n"
    cfg = write(tmp_path, strict)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "b"), "--check"]) == 2
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert summary["check"]["failures"]


def test_partial_outputs_removed_on_failure(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL_STRONG)
    out = tmp_path / "o"

    def boom(*a, **k):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(cli, "rows_to_csv", boom)
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 1
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [cfg]


def test_area_check_smoke(tmp_path):
    cfg = write(tmp_path, 'experiment = "area-check"\n[run]\nMs = [4, 8, 16]\nn_paths = 200\nvar_paths = 2000\nvar_M = 16\n'
                '[check]\nvar_tol = 0.2\n')
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o"), "--check"]) == 0
    assert (tmp_path / "o" / "results.csv").read_text().startswith("M,n,l2_residual,se")


@pytest.mark.parametrize("text", [
    'experiment = "zvonkin-sweep"\n[model]\ndrift = "sobolev-bump"\n[run]\nthetas = [4.0, 16.0]\nNx = 200\nNt = 50\n',
    'experiment = "qx-stability"\n[model]\ndrift = "holder-lacunary"\n[run]\nn_fine = 4096\nn = 64\nn_paths = 4\n',
    'experiment = "quadrature"\n[run]\nns = [4, 8, 16]\nM = 8\nn_paths = 100\nf = "c2-sin"\n',
])
def test_other_experiments_smoke(tmp_path, text):
    assert cli.main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "results.csv").stat().st_size > 0


def test_clt_requires_enough_paths(tmp_path, capsys):
    cfg = write(tmp_path, 'experiment = "clt-holder"\n[run]\nn_paths = 100\n')
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "run.n_paths" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess, sys
    res = subprocess.run([sys.executable, "-m", "emclt", "list-presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "smooth-tanh" in res.stdout
