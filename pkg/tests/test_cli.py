import csv
import io

import pytest

from mcreact.cli import ExperimentSpec, main, parse_args

FIG1_SMALL = ["--set", "z_max=1e-4", "--set", "n_rho=55", "--set", "n_z=109", "--set", "t_max=2",
              "--set", "symbol_interval=2"]


def run_cli(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_ber_defaults():
    spec = parse_args(["ber", "--config", "t1.cfg", "--seed", "7"])
    assert spec == ExperimentSpec("ber", "t1.cfg", None, 7, 1_000_000, (), 1)


def test_parse_trials_and_overrides():
    spec = parse_args(["sweep", "--config", "a.cfg", "--trials", "1e5", "--set", "delta_t=5e-3",
                       "--set", "gamma=3", "--workers", "2"])
    assert spec.trials == 100_000 and spec.overrides == ("delta_t=5e-3", "gamma=3") and spec.workers == 2


def test_missing_config_is_usage_error(capsys):
    code, _, err = run_cli(["sweep"], capsys)
    assert code == 2 and "requires --config" in err


@pytest.mark.parametrize("args", [["bogus"], ["ber", "--config", "x", "--trials", "0.5"],
                                  ["ber", "--config", "x", "--seed", "-1"]])
def test_bad_arguments(args, capsys):
    assert run_cli(args, capsys)[0] == 2


def test_config_errors_exit_2(small_cfg_path, capsys):
    code, out, err = run_cli(["simulate", "--config", str(small_cfg_path), "--set", "delta_t=0"], capsys)
    assert code == 2 and out == "" and "Δt must be positive" in err
    code, _, err = run_cli(["simulate", "--config", str(small_cfg_path), "--set", "delta_t=5e-3"], capsys)
    assert code == 2 and "under-resolved" in err


def test_numerical_failure_exit_1(small_cfg_path, capsys):
    code, _, err = run_cli(["ber", "--config", str(small_cfg_path), "--set", "kappa_f=0"], capsys)
    assert code == 1 and "no product formed" in err


def test_simulate_trace(small_cfg_path, capsys):
    code, out, _ = run_cli(["simulate", "--config", str(small_cfg_path), "--set", "t_max=2"], capsys)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["t", "C_A_rx", "C_B_rx", "C_C_rx", "q_bar"]
    assert len(rows) == 202


def test_fig2_columns(small_cfg_path, tmp_path, capsys):
    out = tmp_path / "fig2.csv"
    assert main(["fig2", "--config", str(small_cfg_path), "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert header[0] == "t" and len(header[1:]) == 5
    assert header[1] == "C_A_direct" and all(h.startswith("C_C_") for h in header[2:])


def test_sweep_footer_and_determinism(small_cfg_path, tmp_path):
    paths = [tmp_path / f"s{i}.csv" for i in range(3)]
    base = ["sweep", "--config", str(small_cfg_path), "--seed", "5", "--trials", "2e5", "--set", "memory=1"]
    assert main(base + ["--out", str(paths[0])]) == 0
    assert main(base + ["--out", str(paths[1])]) == 0
    assert main(base + ["--workers", "3", "--out", str(paths[2])]) == 0
    texts = [p.read_bytes() for p in paths]
    assert texts[0] == texts[1] == texts[2]
    footer = [ln for ln in texts[0].decode().splitlines() if ln.startswith("#")]
    assert footer[0].startswith("# gamma_star=") and "ber_star=" in footer[0]
    other = tmp_path / "seed6.csv"
    assert main(base[:4] + ["6"] + base[5:] + ["--out", str(other)]) == 0
    assert other.read_bytes() != texts[0]


def test_ber_single_threshold(small_cfg_path, capsys):
    code, out, _ = run_cli(["ber", "--config", str(small_cfg_path), "--trials", "1e4", "--set", "memory=1",
                            "--set", "gamma=3"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "gamma,ber_analytical,ber_mc,mc_stderr"
    assert lines[1].startswith("3,") and lines[2].startswith("# gamma_star=")


def test_oracle_compare(capsys):
    code, out, _ = run_cli(["oracle-compare", "--seed", "3"], capsys)
    footer = [ln for ln in out.splitlines() if ln.startswith("#")]
    assert code == 0 and "max_rel_dev=" in footer[0] and "half_life_ode=" in footer[1]
    assert main(["oracle-compare", "--seed", "3"]) == 0
    assert capsys.readouterr().out == out


def test_fig1_small(capsys):
    code, out, _ = run_cli(["fig1", "--seed", "1"] + FIG1_SMALL, capsys)
    assert code == 0 and out.splitlines()[0].startswith("t,c_A_solver,c_A_ode")
    assert main(["fig1", "--seed", "1", "--workers", "2"] + FIG1_SMALL) == 0
    assert capsys.readouterr().out == out


def test_unwritable_output(small_cfg_path, capsys):
    code, _, err = run_cli(["simulate", "--config", str(small_cfg_path), "--set", "t_max=2",
                            "--out", "/nonexistent/dir/x.csv"], capsys)
    assert code == 1 and "cannot write" in err
