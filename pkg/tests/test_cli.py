import math

import numpy as np
import pytest

from lrbug import cli, fdm
from lrbug import timestep as ts

BASE = """\
[experiment]
preset = ex51_parameter
scheme = midpoint
preconditioners = bug
grids = 15, 31
"""


def parse(text):
    return cli.parse_config(text, "exp.ini")


class TestConfig:
    def test_defaults(self):
        cfg = parse(BASE)
        assert cfg.grids == (15, 31) and cfg.preconditioners == ("bug",)
        assert (cfg.restart, cfg.maxit, cfg.max_total_iterations) == (3, 30, 90)

    def test_maxit_follows_ceiling(self):
        cfg = parse(BASE + "restart = 25\n")
        assert cfg.maxit == 3

    def test_ceiling_enforced(self):
        with pytest.raises(cli.ConfigError, match=r"exp.ini:7: .*exceeds the ceiling 90"):
            parse(BASE + "restart = 25\nmaxit = 4\n")

    def test_unknown_key_has_line(self):
        with pytest.raises(cli.ConfigError, match=r"exp.ini:3: \[experiment\] schem: unknown key"):
            parse(BASE.replace("scheme", "schem"))

    def test_bad_values_have_lines(self):
        with pytest.raises(cli.ConfigError, match=r"exp.ini:2: .*unknown preset"):
            parse(BASE.replace("ex51_parameter", "ex77"))
        with pytest.raises(cli.ConfigError, match=r"exp.ini:4: .*unknown preconditioner 'jacobi'"):
            parse(BASE.replace("= bug", "= bug, jacobi"))
        with pytest.raises(cli.ConfigError, match=r"exp.ini:6: .*expected an integer"):
            parse(BASE + "seed = one\n")
        with pytest.raises(cli.ConfigError, match=r"exp.ini:8: \[tolerance\] eps_scale"):
            parse(BASE + "\n[tolerance]\neps_scale = -1\n")

    def test_empty_grids(self):
        with pytest.raises(cli.ConfigError, match=r"exp.ini:5: .*empty grid list"):
            parse(BASE.replace("15, 31", ""))

    def test_small_grid(self):
        with pytest.raises(cli.ConfigError, match="below the minimum"):
            parse(BASE.replace("15, 31", "2, 15"))

    def test_grid_mismatch_between_preconditioners(self):
        text = BASE + "\n[preconditioner:es]\ngrids = 15, 63\n"
        with pytest.raises(cli.ConfigError, match=r"exp.ini:8: .*differs from \[experiment\] grids"):
            parse(text)
        assert parse(BASE + "\n[preconditioner:es]\ngrids = 15, 31\n").grids == (15, 31)

    def test_unknown_section(self):
        with pytest.raises(cli.ConfigError, match=r"exp.ini:6: unknown section \[solver\]"):
            parse(BASE + "[solver]\nm = 3\n")

    def test_missing_experiment(self):
        with pytest.raises(cli.ConfigError, match="missing"):
            parse("[tolerance]\neps = 1e-3\n")

    def test_syntax_error(self):
        with pytest.raises(cli.ConfigError):
            parse("[experiment\npreset = x\n")

    def test_tolerance_overrides(self):
        h = 2 / 32
        cfg = parse(BASE + "[tolerance]\neps_power = 2\neps2_power = 2\n")
        p = cfg.policy(h, 2)
        assert p.eps == pytest.approx(h**2) and p.delta == p.eps and p.eps2 == pytest.approx(h**2)
        p = parse(BASE + "[tolerance]\neps_scale = 0.01\n").policy(h, 2)
        assert p.eps == pytest.approx(0.01 * h**3) and p.eps2 == pytest.approx(h**2)
        p = parse(BASE + "[tolerance]\neps = 1e-5\ndelta = 1e-4\n").policy(h, 2)
        assert (p.eps, p.delta) == (1e-5, 1e-4)
        assert parse(BASE).policy(h, 4) == ts.tolerance_for(h, 4)

    @pytest.mark.parametrize("name", fdm.PRESETS)
    def test_dump_round_trip(self, name):
        cfg = parse(cli.preset_config_text(name))
        problem = fdm.preset(name)
        assert cfg.preset == name and cfg.grids == problem.grid_family
        h = problem.h
        order = ts.SCHEMES[cfg.scheme]().order
        got, want = cfg.policy(h, order), ts.tolerance_for(h, order)
        assert (got.eps, got.eps2, got.delta) == pytest.approx((want.eps, want.eps2, want.delta), rel=1e-12)
        assert cli.load_config(name) == cli.parse_config(cli.preset_config_text(name), f"<preset {name}>")

    def test_load_config(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(BASE)
        assert cli.load_config(str(p)).source == str(p)
        with pytest.raises(cli.ConfigError):
            cli.load_config("nope")


def test_observed_orders():
    o = cli.observed_orders([4e-2, 1e-2, 2.5e-3], [0.2, 0.1, 0.05])
    assert math.isnan(o[0]) and o[1:] == pytest.approx([2.0, 2.0])
    assert math.isnan(cli.observed_orders([1.0, 0.0], [0.2, 0.1])[1])


def test_csv_number_format():
    hist = ts.StepHistory(h=0.1)
    hist.append(ts.StepRecord(1, 0.1, 1.23456789e-4, float("nan"), 3, 7, 2))
    lines = cli.history_csv(hist).splitlines()
    assert lines[0] == ",".join(cli.CSV_HEADER)
    assert lines[1] == "1,1.00000e-01,1.23457e-04,nan,3,7,2"


class TestCommands:
    def test_run_rows(self, tmp_path):
        assert cli.main(["run", "ex51_parameter", "--grid", "31", "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "history.csv").read_text().splitlines()
        nt = math.floor(0.1 * math.pi / (2 / 32))
        assert len(rows) == nt + 1
        assert rows[-1].startswith(f"{nt},")

    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            cli.main(["run", "ex54_compare", "--grid", "31", "--precond", "hybrid", "--out", str(tmp_path / d)])
        a = (tmp_path / "a" / "history.csv").read_bytes()
        assert a == (tmp_path / "b" / "history.csv").read_bytes()

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
        assert cli.main(["run", "ex51_parameter", "--grid", "15", "--steps", "2"]) == 0
        path = tmp_path / "ex51_parameter" / "run" / "history.csv"
        assert len(path.read_text().splitlines()) == 3

    def test_convergence(self, tmp_path, capsys):
        assert cli.main(["convergence", "ex51_parameter", "--grids", "15,31", "--precond", "bug,none",
                         "--out", str(tmp_path), "--jobs", "2"]) == 0
        rows = (tmp_path / "table.csv").read_text().splitlines()
        assert rows[0] == "preconditioner,n,h,error,order"
        assert len(rows) == 5
        assert rows[1].endswith(",nan") and not rows[2].endswith(",nan")
        assert "| bug | 31 |" in capsys.readouterr().out

    def test_convergence_needs_two_grids(self, tmp_path):
        assert cli.main(["convergence", "ex51_parameter", "--grids", "15", "--out", str(tmp_path)]) == 2

    def test_compare_outputs(self, tmp_path):
        assert cli.main(["compare", "ex54_compare", "--grid", "15", "--precond", "es,bug,hybrid", "--steps", "3",
                         "--out", str(tmp_path)]) == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == sorted([f"history_{pc}.csv" for pc in ("es", "bug", "hybrid")]
                               + [f"{c}.svg" for c in cli.PLOT_COLUMNS])
        svg = (tmp_path / "error.svg").read_text()
        assert svg.lstrip().startswith("<?xml") and "<svg" in svg

    def test_compare_single_matches_run(self, tmp_path):
        cli.main(["compare", "ex51_parameter", "--grid", "15", "--no-plots", "--out", str(tmp_path / "c")])
        cli.main(["run", "ex51_parameter", "--grid", "15", "--out", str(tmp_path / "r")])
        assert (tmp_path / "c" / "history_bug.csv").read_bytes() == (tmp_path / "r" / "history.csv").read_bytes()

    def test_none_restart_modes(self, tmp_path):
        for tag, restart in (("3", 3), ("25", 25)):
            p = tmp_path / f"none{tag}.ini"
            p.write_text(BASE.replace("= bug", "= none") + f"restart = {restart}\n")
            assert cli.main(["run", str(p), "--steps", "1", "--out", str(tmp_path / tag)]) == 0
        its = [np.genfromtxt(tmp_path / t / "history.csv", delimiter=",", names=True)["iterations"]
               for t in ("3", "25")]
        assert its[0] >= 1 and its[1] >= 1

    def test_dump_preset(self, tmp_path, capsys):
        assert cli.main(["dump-preset", "ex56_dirk"]) == 0
        assert "scheme = dirk4" in capsys.readouterr().out
        target = tmp_path / "d.ini"
        cli.main(["dump-preset", "ex55_bdf", "--out", str(target)])
        assert cli.load_config(str(target)).scheme == "bdf4"

    def test_bad_override(self, tmp_path, capsys):
        assert cli.main(["run", "ex51_parameter", "--precond", "jacobi", "--out", str(tmp_path)]) == 2
        assert "config error" in capsys.readouterr().err
