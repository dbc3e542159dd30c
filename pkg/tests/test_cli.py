import json
from pathlib import Path

import pytest

from datarecon import cli, dataio


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 else out.err)


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "train"
    assert cli.main(["train", "--arch", "affine", "--data", "synth", "--n", "12", "--k", "48",
                     "--seed", "1", "--out", str(out)]) == 0
    return out


def test_train_writes_artifacts(trained):
    summary = json.loads((trained / "summary.json").read_text())
    assert summary["converged"] and summary["train_accuracy"] == 1.0
    man = json.loads((trained / "manifest.json").read_text())
    assert man["command"] == "train" and man["master_seed"] == 1
    assert man["config"]["data"]["n"] == 12 and man["backend"] in ("numba", "numpy")
    for name in ("weights", "trace", "dataset", "summary"):
        assert (trained / man["artifacts"][name]).exists()
    header, _ = dataio.read_arrays(trained / "weights.bin")
    assert header["spec"]["arch"] == "affine" and header["rho"] == 1e-4 and header["seed"] == 1


def test_reconstruct_gt_bilevel(trained, tmp_path, capsys):
    code, res = run(["reconstruct", "--weights", trained / "weights.bin", "--method", "bilevel",
                     "--init", "gt", "--out", tmp_path], capsys)
    assert code == 0
    assert res["theta_dist"] <= 1e-3 and res["mean_abs_to_gt"] <= 1e-6
    assert (tmp_path / "images" / "recon_0000.ppm").exists()
    rows = (tmp_path / "nn_table.csv").read_text().splitlines()
    assert rows[0] == "recon_index,nn_index,l2,rank" and len(rows) == 13
    assert (tmp_path / "trace.csv").read_text().startswith("iter,upper_loss,a_norm,theta_dist,eta")


def test_reconstruct_gradpen_random(trained, tmp_path, capsys):
    code, res = run(["reconstruct", "--weights", trained / "weights.bin", "--method", "gradpen",
                     "--init", "random", "--gp-iters", "300", "--out", tmp_path], capsys)
    assert code == 0 and res["theta_dist"] is None
    assert res["nn_l2_mean"] > 1.0  # noise-like reconstructions


def test_reconstruct_mix_records_assignment(trained, tmp_path, capsys):
    code, res = run(["reconstruct", "--weights", trained / "weights.bin", "--method", "gradpen",
                     "--init", "mix", "--lambda1", "0.5", "--lambda2", "0.5", "--gp-iters", "10",
                     "--out", tmp_path], capsys)
    assert code == 0 and len(res["partition_assignment"]) == 12


def test_usage_errors(trained, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["reconstruct", "--weights", str(trained / "weights.bin"), "--method", "magic"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["reconstruct"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 2


def test_io_errors(tmp_path, capsys):
    assert cli.main(["reconstruct", "--weights", str(tmp_path / "none.bin")]) == 4
    bad = tmp_path / "weights.bin"
    bad.write_bytes(b"garbage!")
    (tmp_path / "dataset.bin").write_bytes(b"garbage!")
    assert cli.main(["sweep", "--weights", str(bad), "--out", str(tmp_path / "o")]) == 4


def test_numeric_failure_exit_code(tmp_path, capsys):
    code = cli.main(["train", "--loss", "mse", "--lr", "1e6", "--max-iters", "50", "--out", str(tmp_path)])
    assert code == 3


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"n": 4, "k": 6}, "train": {"lr": 0.02}, "seed": 5}))
    code, _ = run(["train", "--config", cfg, "--k", "8", "--out", tmp_path / "r"], capsys)
    assert code == 0
    eff = json.loads((tmp_path / "r" / "manifest.json").read_text())["config"]
    assert (eff["data"]["n"], eff["data"]["k"], eff["train"]["lr"], eff["seed"]) == (4, 8, 0.02, 5)
    assert eff["train"]["momentum"] == 0.9  # untouched default


def test_output_root_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    code, res = run(["train", "--n", "2", "--k", "3", "--seed", "4"], capsys)
    assert code == 0
    path = Path(res["run_dir"])
    assert path.parent == tmp_path and path.name.endswith("_train_seed4")


def test_linear_analysis(trained, tmp_path, capsys):
    code, rep = run(["linear-analysis", "--weights", trained / "weights.bin", "--construct", "collapse",
                     "--out", tmp_path / "c"], capsys)
    assert code == 0
    assert rep["stationarity_residual"] <= 1e-6
    assert (rep["n_equations"], rep["n_unknowns"]) == (12, 12 * 48)
    assert rep["collapse"]["penalty"] <= 1e-12 and (tmp_path / "c" / "collapse.bin").exists()
    code, rep = run(["linear-analysis", "--weights", trained / "weights.bin", "--construct", "interpolate",
                     "--out", tmp_path / "i"], capsys)
    assert code == 0 and rep["interpolate"]["penalty_mse"] <= 1e-12


def test_linear_analysis_rejects_nonaffine(tmp_path, capsys):
    assert cli.main(["train", "--arch", "onehidden", "--hidden", "3", "--n", "2", "--k", "3",
                     "--out", str(tmp_path / "t")]) == 0
    capsys.readouterr()
    assert cli.main(["linear-analysis", "--weights", str(tmp_path / "t" / "weights.bin"),
                     "--out", str(tmp_path / "l")]) == 2


def test_sweep_small_grid_and_replay(trained, tmp_path, capsys):
    code, res = run(["sweep", "--weights", trained / "weights.bin", "--lambdas", "0,1",
                     "--methods", "gradpen", "--gp-iters", "200", "--out", tmp_path / "s"], capsys)
    assert code == 0 and res["cells"] == 4
    lines = (tmp_path / "s" / "grid.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("method,lambda1,lambda2")
    code, _ = run(["--replay", tmp_path / "s" / "manifest.json", "--out", tmp_path / "s2"], capsys)
    assert code == 0
    assert tree_digest(tmp_path / "s") == tree_digest(tmp_path / "s2")


def test_replay_train_is_byte_identical(trained, tmp_path, capsys):
    code, _ = run(["--replay", trained / "manifest.json", "--out", tmp_path], capsys)
    assert code == 0
    assert tree_digest(trained) == tree_digest(tmp_path)


def test_replay_rejects_bad_manifest(tmp_path, capsys):
    p = tmp_path / "m.json"
    p.write_text("{}")
    assert cli.main(["--replay", str(p)]) == 4
