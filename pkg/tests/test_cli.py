import numpy as np
import pytest

from resdiff import cli
from resdiff.fileio import read_samples
from resdiff.schedules import schedule_from_csv
from resdiff.verify import CHECK_INVENTORY


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path


def test_show_keys(capsys):
    assert cli.main(["sample", "--show-keys"]) == 0
    assert "eta=0\n" in capsys.readouterr().out


def test_unknown_key_exit_code(root, capsys):
    assert cli.main(["sample", "colour=blue"]) == 2
    assert "colour" in capsys.readouterr().err


@pytest.mark.parametrize("arg", ["eta=2", "steps=0", "schedule=cubic", "seed=-1", "task=moons",
                                 "schedule=linear beta_bar_T_sq=0.01", "T=10 steps=20"])
def test_invalid_values_name_the_key(root, capsys, arg):
    assert cli.main(["schedule", *arg.split()]) == 2
    err = capsys.readouterr().err
    assert arg.split()[-1].split("=")[0] in err


def test_override_forms():
    assert cli._overrides(["eta=0.5", "--steps", "7", "--n-samples=3"]) == {"eta": "0.5", "steps": "7",
                                                                             "n_samples": "3"}
    with pytest.raises(cli.ConfigError):
        cli._overrides(["--steps"])


def test_config_file_then_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nsteps = 7\neta=0.5\n")
    cfg = cli.load_config("sample", f, {"steps": "9"})
    assert cfg["steps"] == 9 and cfg["eta"] == 0.5
    assert cfg["schedule"] == "dec-inc" and cfg["output"] == "sample"
    with pytest.raises(cli.ConfigError, match="line|:2"):
        cli.parse_config_text("a=1\nnot a pair\n", "f")


def test_schedule_command(root, capsys):
    assert cli.main(["schedule", "schedule=linear", "eta=1"]) == 0
    out = root / "schedule"
    s = schedule_from_csv((out / "schedule-rddm.csv").read_text(), eta=1.0)
    assert abs(s.alpha_bar[1000] - 1) < 1e-12
    assert np.sum(s.sigma[1:] ** 2) <= s.beta_bar_T_sq
    assert (out / "ddim-products.csv").exists()
    assert (out / "config.resolved").exists()
    assert "rddm: sum sigma^2" in capsys.readouterr().out


def test_every_family_within_noise_budget():
    for fam in cli.FAMILIES:
        cfg = cli.load_config("schedule", None, {"eta": "1", "schedule": fam})
        s = cli.build_schedule(cfg).with_variance(1.0, "rddm")
        assert np.sum(s.sigma[1:] ** 2) <= s.beta_bar_T_sq


def test_rerun_from_resolved_config_is_bitwise(root):
    args = ["sample", "T=100", "steps=10", "n_samples=300", "null_reps=5", "eta=1", "trace=true"]
    assert cli.main(args + ["output=a"]) == 0
    cfg_file = root / "a" / "config.resolved"
    text = cfg_file.read_text().replace("output=a", "output=b")
    (root / "b.cfg").write_text(text)
    assert cli.main(["sample", "--config", str(root / "b.cfg")]) == 0
    for name in ("samples.csv", "trajectory.csv", "metrics.csv"):
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()


def test_sample_oracle_below_null(root):
    cfg = cli.load_config("sample", None, {"steps": "100", "n_samples": "2000", "null_reps": "50"})
    m = cli.cmd_sample(cfg, echo=lambda *_: None)["metrics"]
    assert m["moment_distance"] < m["moment_null_q99"]
    assert read_samples(root / "sample" / "samples.csv").shape == (2000, 2)


def test_sample_ground_truth_restoration(root):
    cfg = cli.load_config("sample", None, {"task": "shade-restore", "predictor": "ground-truth", "steps": "5",
                                           "n_samples": "4", "method": "SM-Res", "n_images": "2"})
    m = cli.cmd_sample(cfg, echo=lambda *_: None)["metrics"]
    assert m["mse"] < 1e-20 < m["degraded_mse"]
    assert (root / "sample" / "output-0001.pgm").exists()


def test_oracle_only_for_gaussian(root):
    assert cli.main(["sample", "task=mixture-2d"]) == 2


def test_sample_missing_checkpoint(root, capsys):
    assert cli.main(["sample", "predictor=checkpoint", f"checkpoint={root / 'none.npz'}"]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_singular_abort_exit_code(root):
    assert cli.main(["sample", "method=SM-N", "steps=5", "n_samples=10", "null_reps=2"]) == 3


def test_train_then_sample_checkpoint(root):
    args = ["T=100", "iterations=30", "hidden=8", "batch_size=16", "log_every=10"]
    assert cli.main(["train", *args, "output=net"]) == 0
    log = (root / "net" / "training-log.csv").read_text().splitlines()
    assert log[0] == "iteration,loss,lambda_learn,resolved" and len(log) == 4
    ckpt = root / "net" / "model.npz"
    assert cli.main(["sample", "T=100", "steps=5", "n_samples=50", "null_reps=5", "predictor=checkpoint",
                     f"checkpoint={ckpt}", "method=SM-Res"]) == 0


def test_checkpoint_dimension_mismatch(root):
    assert cli.main(["train", "T=100", "iterations=2", "hidden=4", "output=net"]) == 0
    assert cli.main(["sample", "task=shade-restore", "T=100", "predictor=checkpoint",
                     f"checkpoint={root / 'net' / 'model.npz'}"]) == 2


def test_aosa_command_writes_result(root):
    assert cli.main(["aosa", "T=100", "iterations=20", "hidden=8", "log_every=5"]) == 0
    rows = (root / "aosa" / "aosa-result.csv").read_text().splitlines()
    assert rows[0] == "resolved,resolved_at,lambda_learn,reinit_seed"


def test_path_experiment_rejects_single_network(root, capsys):
    assert cli.main(["path-experiment", "predictor=checkpoint", "checkpoint=x.npz"]) == 2
    assert "paired" in capsys.readouterr().err


def test_path_experiment_ground_truth(root):
    assert cli.main(["path-experiment", "predictor=ground-truth", "n_samples=100"]) == 0
    lines = (root / "path-experiment" / "path-report.csv").read_text().splitlines()
    assert lines[0] == "variant,energy_distance,mean_displacement"
    assert len(lines) == 1 + 4 + 2
    for line in lines[1:]:
        assert float(line.split(",")[1]) < 1e-12


@pytest.mark.slow
def test_verify_passes_and_reports_inventory(root):
    assert cli.main(["verify"]) == 0
    rows = (root / "verify" / "verify-report.csv").read_text().splitlines()
    assert rows[0] == "check-name,statistic,bound,pass"
    assert [r.split(",")[0] for r in rows[1:]] == list(CHECK_INVENTORY)


@pytest.mark.slow
def test_verify_fault_injection(root, capsys):
    assert cli.main(["verify", "fault=true"]) == 1
    assert "ddim-equivalence" in capsys.readouterr().err
