import csv
import hashlib
import json

import numpy as np
import pytest

from kspacediff.arrayfile import read_array
from kspacediff.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, main, manifest_path
from kspacediff.kspace import ifft2c
from kspacediff.score import TrainableScore, load_checkpoint

SHAPE = "32,32"
TINY = ["--epochs", "1", "--hidden", "4", "--depth", "2", "--levels", "3"]
FAST = ["--levels", "3", "--corrector-steps", "1"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("phantom", "--shape", SHAPE, "--count", 4, "--out", d / "ph.kd") == 0
    assert run("mask", "--shape", SHAPE, "--accel", 4, "--calib", 6, "--seed", 3, "--out", d / "mask.kd") == 0
    assert run("undersample", "--data", d / "ph.kd", "--mask", d / "mask.kd", "--out", d / "meas.kd") == 0
    assert run("train", "--data", d / "ph.kd", "--operator", "weight", *TINY, "--out", d / "w.ckpt") == 0
    assert run("train", "--data", d / "ph.kd", "--operator", "mask", "--window", 6, *TINY,
               "--out", d / "m.ckpt") == 0
    assert run("train", "--data", d / "ph.kd", "--operator", "identity", *TINY, "--out", d / "f.ckpt") == 0
    return d


def recon_args(d, out, *extra):
    return ["reconstruct", "--meas", d / "meas.kd", "--mask", d / "mask.kd", "--model-w", d / "w.ckpt",
            "--model-m", d / "m.ckpt", *FAST, "--out", out, *extra]


def test_phantom_dims(tmp_path):
    assert run("phantom", "--count", 2, "--coils", 3, "--shape", "32,40", "--out", tmp_path / "p.kd") == 0
    af = read_array(tmp_path / "p.kd")
    assert af.count == 2 and tuple(af.dims) == (3, 32, 40) and af.domain == "image"


def test_usage_errors_exit_1(tmp_path):
    assert run() == EXIT_USAGE
    assert run("phantom", "--bogus") == EXIT_USAGE
    assert run("verify", "--out", tmp_path / "x") == EXIT_USAGE
    assert run("phantom", "--count", 0, "--out", tmp_path / "x.kd") == EXIT_USAGE
    assert run("phantom", "--out", tmp_path / "x.kd", "--config", tmp_path / "missing.json") == EXIT_USAGE
    assert run("reconstruct", "--out", tmp_path / "r.kd") == EXIT_USAGE


def test_help_and_version_exit_0(capsys):
    assert run("--help") == 0
    assert run("--version") == 0


def test_data_errors_exit_2(work, tmp_path):
    assert run("undersample", "--data", tmp_path / "nope.kd", "--mask", work / "mask.kd",
               "--out", tmp_path / "x.kd") == EXIT_DATA
    assert run("mask", "--shape", SHAPE, "--accel", 20, "--calib", 16, "--out", tmp_path / "m.kd") == EXIT_DATA
    run("mask", "--shape", "16,16", "--out", tmp_path / "small.kd")
    assert run("undersample", "--data", work / "ph.kd", "--mask", tmp_path / "small.kd",
               "--out", tmp_path / "x.kd") == EXIT_DATA
    (tmp_path / "bad.kd").write_bytes(b"not an array file")
    assert run("correlate", "--data", tmp_path / "bad.kd", "--out", tmp_path / "c.csv") == EXIT_DATA


def test_swapped_models_are_refused(work, tmp_path):
    argv = recon_args(work, tmp_path / "r.kd")
    i = argv.index("--model-w")
    argv[i + 1], argv[i + 3] = argv[i + 3], argv[i + 1]
    assert run(*argv) == EXIT_DATA


def test_appendix_a_and_theorem1(tmp_path):
    assert run("verify", "appendixA", "--out", tmp_path / "a.json") == 0
    assert json.loads((tmp_path / "a.json").read_text())["max_deviation"] < 1e-10
    assert run("verify", "theorem1", "--draws", 2000, "--out", tmp_path / "t.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert [float(r["alpha"]) for r in rows] == [0.0, 0.3, 0.6]


def test_appendix_a_failure_is_numeric_exit(tmp_path, monkeypatch):
    import kspacediff.cli as cli
    monkeypatch.setattr(cli, "verify_orthogonal_equivalence", lambda **kw: 1.0)
    assert run("verify", "appendixA", "--out", tmp_path / "a.json") == EXIT_NUMERIC


def test_manifest_records_hashes(work):
    m = json.loads(manifest_path(work / "mask.kd").read_text())
    assert m["command"] == "mask" and m["seed"] == 3
    assert m["config"]["accel"] == 4.0
    assert m["outputs"] == {str(work / "mask.kd"): hashlib.sha256((work / "mask.kd").read_bytes()).hexdigest()}


def test_replay_is_bit_exact(work, tmp_path):
    out = tmp_path / "r.kd"
    assert run(*recon_args(work, out)) == 0
    assert run("replay", manifest_path(out), "--out", tmp_path / "again.kd") == 0
    assert (tmp_path / "again.kd").read_bytes() == out.read_bytes()
    assert run("replay", manifest_path(work / "mask.kd"), "--out", tmp_path / "mask2.kd") == 0
    assert (tmp_path / "mask2.kd").read_bytes() == (work / "mask.kd").read_bytes()


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"accel": 8, "shape": [32, 32], "seed": 4}))
    assert run("mask", "--config", cfg, "--out", tmp_path / "a.kd") == 0
    assert run("mask", "--config", cfg, "--accel", 2, "--out", tmp_path / "b.kd") == 0
    a = json.loads(manifest_path(tmp_path / "a.kd").read_text())["config"]
    b = json.loads(manifest_path(tmp_path / "b.kd").read_text())["config"]
    assert a["accel"] == 8 and b["accel"] == 2 and a["shape"] == [32, 32] and a["seed"] == 4
    cfg.write_text(json.dumps({"no_such_option": 1}))
    assert run("mask", "--config", cfg, "--out", tmp_path / "c.kd") == EXIT_USAGE


def test_zero_epochs_leaves_initialization(work, tmp_path):
    assert run("train", "--data", work / "ph.kd", "--operator", "weight", "--epochs", 0, "--hidden", 4,
               "--depth", 2, "--seed", 7, "--out", tmp_path / "z.ckpt") == 0
    model = load_checkpoint(tmp_path / "z.ckpt")
    fresh = TrainableScore((32, 32), model.operator_tag, model.schedule, seed=7, hidden=4, depth=2)
    np.testing.assert_array_equal(model.parameters_vector(), fresh.parameters_vector())


def test_parallel_with_unit_weight_branch_matches_single(work, tmp_path):
    assert run(*recon_args(work, tmp_path / "par.kd", "--mode", "parallel", "--l1", 1, "--l2", 0)) == 0
    assert run(*recon_args(work, tmp_path / "one.kd", "--mode", "single")) == 0
    np.testing.assert_allclose(read_array(tmp_path / "par.kd").data, read_array(tmp_path / "one.kd").data,
                               rtol=0, atol=1e-6)


def test_full_sampling_returns_the_data(work, tmp_path):
    assert run("mask", "--shape", SHAPE, "--accel", 1, "--out", tmp_path / "full.kd") == 0
    assert run("phantom", "--shape", SHAPE, "--domain", "kspace", "--seed", 11, "--out", tmp_path / "k.kd") == 0
    assert run("reconstruct", "--meas", tmp_path / "k.kd", "--mask", tmp_path / "full.kd", "--model-w",
               work / "w.ckpt", "--model-m", work / "m.ckpt", *FAST, "--out", tmp_path / "r.kd") == 0
    k = read_array(tmp_path / "k.kd").data[0].astype(np.complex128)
    img = read_array(tmp_path / "r.kd").data[0]
    np.testing.assert_allclose(img, ifft2c(k), atol=1e-6)


def test_reconstruct_metrics_and_pgms(work, tmp_path):
    out = tmp_path / "r.kd"
    assert run(*recon_args(work, out, "--ref", work / "ph.kd")) == 0
    assert read_array(out).count == 4
    assert all((tmp_path / f"r_{i}.pgm").exists() for i in range(4))
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert [r["method"] for r in rows[:2]] == ["zero-filled", "serial"]
    assert len(rows) == 8


def test_correlate_dedups_and_bounds(work, tmp_path, capsys):
    assert run("correlate", "--data", work / "ph.kd", "--window-list", "30,30,50,70",
               "--out", tmp_path / "c.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert [int(r["window"]) for r in rows] == [30, 50, 70]
    assert all(-1 <= float(r["rho_min"]) <= float(r["rho_mean"]) <= float(r["rho_max"]) <= 1 for r in rows)
    assert sum(int(r["is_max"]) for r in rows) == 1
    assert "maximizer" in capsys.readouterr().out


def test_convergence_verify(work, tmp_path):
    assert run("verify", "convergence", "--model-w", work / "w.ckpt", "--model-m", work / "m.ckpt",
               "--model-full", work / "f.ckpt", *FAST, "--out", tmp_path / "conv.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "conv.csv")))
    assert {r["chain"] for r in rows} == {"full", "weight", "mask", "combined"}
    assert len(rows) == 4 * 3
