import json
import math

import pytest

from mcode import cli
from mcode.problems import builtin_problem


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return header, [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_exponential_run_is_deterministic(tmp_path, capsys):
    code, out, _ = run(["run", "exponential", "--n", "100", "--out", str(tmp_path)], capsys)
    assert code == 0 and "gate passed" in out
    _, rows = read_csv(tmp_path / "exponential.csv")
    assert [float(r["t"]) for r in rows] == [0.0, 0.5, 1.0, 1.5, 2.0]
    for r in rows:
        assert float(r["mean_0"]) == pytest.approx(math.exp(float(r["t"])), rel=1e-12)
        assert float(r["variance_0"]) == pytest.approx(0.0, abs=1e-24)
    meta = json.loads((tmp_path / "exponential.json").read_text())
    assert meta["N"] == 100 and meta["n_clipped"] == 0
    assert (tmp_path / "exponential.dat").read_text().startswith("# exponential")


def test_csv_is_byte_stable(tmp_path, capsys):
    args = ["run", "quadratic", "--n", "20000", "--seed", "3", "--chunks", "4"]
    run(args + ["--out", str(tmp_path / "a")], capsys)
    run(args + ["--out", str(tmp_path / "b")], capsys)
    a = (tmp_path / "a" / "quadratic.csv").read_bytes()
    assert a == (tmp_path / "b" / "quadratic.csv").read_bytes()
    for d in ("c", "d"):
        run(args + ["--out", str(tmp_path / d), "--backend", "numpy"], capsys)
    assert (tmp_path / "c" / "quadratic.csv").read_bytes() == (tmp_path / "d" / "quadratic.csv").read_bytes()


def test_out_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    code, out, _ = run(["run", "quadratic", "--n", "2000"], capsys)
    assert code == 0
    assert (tmp_path / "env" / "quadratic.csv").exists()


def test_window_past_validity_needs_force(tmp_path, capsys):
    code, _, err = run(["run", "quadratic", "--n", "2000", "--window", "0,0.6", "--out", str(tmp_path)], capsys)
    assert code == 2 and "--force" in err
    assert not (tmp_path / "quadratic.csv").exists()
    code, out, err = run(["run", "quadratic", "--n", "2000", "--window", "0,0.6", "--force", "--out", str(tmp_path)],
                         capsys)
    assert code in (0, 3)
    assert "WARNING" in err and "certified horizon" in err
    meta = json.loads((tmp_path / "quadratic.json").read_text())
    assert any("WARNING" in w for w in meta["warnings"])


def test_validity_report_is_printed(tmp_path, capsys):
    code, out, _ = run(["run", "cosine", "--n", "2000", "--out", str(tmp_path)], capsys)
    assert code == 0 and "horizon_autonomous" in out and "K = 1" in out
    code, out, _ = run(["validity", "quadratic"], capsys)
    assert code == 0 and "horizon_autonomous = 1/(K d) = 0.5" in out
    code, out, _ = run(["validity", "ode201a", "--mode", "single_tree"], capsys)
    assert code == 0 and "horizon_single_tree" in out


def test_list(capsys):
    code, out, _ = run(["list"], capsys)
    assert code == 0
    for name in ("exponential", "quadratic", "system316f"):
        assert name in out


def test_key_value_config(tmp_path, capsys):
    cfg = tmp_path / "lin.cfg"
    cfg.write_text("# linear system\nname = rot\ncomponents = y1; -y0\ny0 = 1, 0\nwindow = 0, 0.3\n"
                   "N = 5000\ngrid = 3\nseed = 2\n")
    code, out, _ = run(["run", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 0
    header, rows = read_csv(tmp_path / "rot.csv")
    assert "mean_1" in header and len(rows) == 4
    last = rows[-1]
    assert abs(float(last["mean_0"]) - math.cos(0.3)) <= 5 * float(last["std_error_0"])


def test_json_config_nonautonomous(tmp_path):
    cfg = tmp_path / "ode.json"
    cfg.write_text(json.dumps({"components": ["y0*y1 + y1^2"], "y0": [0.5], "nonautonomous": True,
                               "window": [0, 0.2], "N": 1000, "density": "gamma_half", "mode": "single_tree"}))
    spec = cli.spec_from_config(cli.read_config(cfg))
    assert spec.problem.system.dimension == 2 and spec.problem.system.time_axis == 0
    assert spec.problem.mode == "single_tree" and str(spec.problem.density) == "gamma_half"
    assert spec.N == 1000 and spec.window == (0.0, 0.2)


def test_preset_config_overrides(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("preset = ode223a\npatches = 1\nclip = 0.1,100\n")
    spec = cli.spec_from_config(cli.read_config(cfg))
    assert spec.patches == 1 and spec.clip.enabled
    assert cli.gate_multiplier(spec) == 4.0
    assert cli.gate_multiplier(cli.ProblemSpec.from_problem(builtin_problem("ode223a"))) == 5.0
    with pytest.raises(ValueError):
        cli.spec_from_config({"preset": "quadratic", "colour": "red"})
    bad = tmp_path / "bad.cfg"
    bad.write_text("this line has no equals sign\n")
    with pytest.raises(ValueError):
        cli.read_config(bad)


def test_partial_trajectory_exit_code(tmp_path, capsys):
    cfg = tmp_path / "sing.cfg"
    cfg.write_text("name = sing\ncomponents = 1/y0\ny0 = 0\nwindow = 0, 40\npatches = 2\ngrid = 2\nN = 200\n")
    code, _, err = run(["run", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_PARTIAL and "incomplete" in err and "singular" in err
    assert (tmp_path / "sing.csv").exists()


def test_butcher_check(capsys):
    code, out, _ = run(["butcher-check", "quadratic", "--max-order", "3", "--n", "200000", "--seed", "1"], capsys)
    assert code == 0
    assert "# order 3: sum of c/nu = 1" in out
    assert "partial sum to order 3" in out
    code, out, _ = run(["butcher-check", "quadratic", "--max-order", "5", "--n", "0"], capsys)
    assert code == 0 and "# order 5: sum of c/nu = 1" in out
    code, _, _ = run(["butcher-check", "quadratic", "--max-order", "12", "--n", "0"], capsys)
    assert code == 2


def test_figure_mode_clips(tmp_path, capsys):
    # clipping is biased, so small runs may fail the gate; only the bookkeeping is checked
    code, out, _ = run(["run", "quadratic", "--n", "2000", "--figure", "--out", str(tmp_path)], capsys)
    assert code in (0, cli.EXIT_GATE)
    meta = json.loads((tmp_path / "quadratic.json").read_text())
    assert meta["clip"] == "0.1,100" and f"clipped = {meta['n_clipped']}" in out


def test_unknown_target():
    with pytest.raises(SystemExit):
        cli.main(["run", "no-such-preset"])
