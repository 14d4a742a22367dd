import json
import subprocess
import sys

import pytest

from ptcate import cli, datagen

TINY = """version: 1
name: tiny
data: {dgp: settingA, n_train: 120, n_test: 200}
nuisance: {hidden_dims: [4], epochs: 20}
ptcate: {epochs_step1: 20, epochs_step2: 10, epochs_step3: 10, lr_g: 0.01, alpha_hidden: [4]}
gamma_grid: [0.0, 0.5, 0.9]
seeds: [0, 1]
pseudo_kinds: [PI, DR]
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_writes_csv(tmp_path, capsys):
    target = tmp_path / "d.csv"
    code, out, _ = run(["simulate", "--dgp", "settingB", "--n", 40, "--seed", 3, "--out", target], capsys)
    assert code == 0 and out.strip() == str(target)
    d = datagen.Dataset.from_csv(target)
    assert len(d) == 40 and d.pi_b is not None


def test_simulate_from_config_into_directory(tmp_path, tiny_cfg, capsys):
    code, out, _ = run(["simulate", "--config", tiny_cfg, "--out", tmp_path / "sim"], capsys)
    assert code == 0
    assert out.strip().endswith("settingA_n120_seed0.csv")


def test_sweep_writes_csv_and_svg(tmp_path, tiny_cfg, capsys):
    out_dir = tmp_path / "runs" / "a"
    code, out, _ = run(["sweep", "--config", tiny_cfg, "--out", out_dir], capsys)
    assert code == 0
    assert (out_dir / "metrics.csv").exists()
    assert len(list(out_dir.glob("*.svg"))) == 2 * 2 + 2
    assert "gamma=0.9" in out


def test_train_records_overrides(tmp_path, tiny_cfg, capsys):
    out_dir = tmp_path / "t"
    code, out, _ = run(["train", "--config", tiny_cfg, "--gamma", 0.9, "--kind", "dr", "--seed", 1,
                        "--out", out_dir], capsys)
    assert code == 0
    meta = json.loads((out_dir / "result.json").read_text())
    assert meta["overrides"] == {"gamma_grid": [0.9], "pseudo_kinds": ["DR"], "seeds": [1],
                                 "output_dir": str(out_dir)}
    assert (out_dir / "model.json").exists()
    rows = (out_dir / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("0.9,1,DR,")


def test_gradcheck_exit_code(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) >= 6
    assert all(line.endswith(" ok") for line in lines)


def test_check_consistency(tmp_path, capsys):
    code, out, _ = run(["check-consistency", "--dgp", "fig2_sigmoid", "--n", 20000, "--bins", 10,
                        "--out", tmp_path], capsys)
    assert code == 0
    assert len(out.strip().splitlines()) == 4
    rows = json.loads((tmp_path / "consistency.json").read_text())
    assert all(r["passed"] for r in rows)


@pytest.mark.parametrize("argv, kind", [
    (["sweep", "--config", "/no/such.yaml"], "ConfigError"),
    (["hillstrom", "--config", "hillstrom", "--data", "/no/such.csv"], "DatasetNotBundledError"),
])
def test_errors_are_one_line(argv, kind, capsys):
    code, out, err = run(argv, capsys)
    assert code == 1
    assert len(err.strip().splitlines()) == 1
    assert err.startswith(f"error: {kind}: ")


def test_gamma_out_of_range(tiny_cfg, capsys):
    code, _, err = run(["train", "--config", tiny_cfg, "--gamma", 1.5], capsys)
    assert code == 1 and "gamma" in err


def test_missing_required_config_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 2


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "ptcate.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("simulate", "train", "sweep", "hillstrom", "gradcheck", "check-consistency"):
        assert sub in proc.stdout
