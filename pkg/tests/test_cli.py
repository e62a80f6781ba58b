import json
from pathlib import Path

import numpy as np
import pytest

import ostop
from ostop import cli
from ostop.value import Component, RegionPartition, ValueFunction

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"


class TestSolveCommand:
    def test_kinked_linear_solves(self, tmp_path):
        code = cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--out-dir", str(tmp_path)])
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["case"] == "VI-inferred"
        a, b = rep["boundaries"]
        assert a == pytest.approx(0.9350093, abs=1e-5)
        assert b == pytest.approx(4.2780324, abs=1e-5)
        assert rep["verified"] is True
        csv_path = tmp_path / "value_function.csv"
        header = csv_path.read_text().splitlines()[0]
        assert header == "x,payoff,value,region"

    def test_rejected_power_payoff_exit_3(self, tmp_path, capsys):
        code = cli.main(["solve", str(PROBLEMS / "power_quadratic.toml"),
                         "--out-dir", str(tmp_path)])
        assert code == 3
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["status"] == "rejected"
        assert "integrable" in " ".join(rep["messages"])

    def test_malformed_file_exit_1(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[diffusion\npreset = gbm")
        assert cli.main(["solve", str(bad)]) == 1

    def test_missing_file_exit_1(self):
        assert cli.main(["solve", "/nonexistent/problem.toml"]) == 1

    def test_staircase_problems(self, tmp_path):
        for name, case in (("staircase_quadratic.toml", "III"),
                           ("staircase_linear.toml", "VI")):
            out = tmp_path / name
            assert cli.main(["solve", str(PROBLEMS / name),
                             "--out-dir", str(out)]) == 0
            rep = json.loads((out / "report.json").read_text())
            assert rep["case"] == case

    def test_put_problem(self, tmp_path):
        assert cli.main(["solve", str(PROBLEMS / "perpetual_put.toml"),
                         "--out-dir", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["case"] == "IV"

    def test_butterfly_problem(self, tmp_path):
        assert cli.main(["solve", str(PROBLEMS / "butterfly.toml"),
                         "--out-dir", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["case"] == "V"

    def test_custom_coefficient_tables(self, tmp_path):
        # raw piecewise-polynomial coefficient tables exercise the numeric
        # fundamental-solution path end to end
        code = cli.main(["solve", str(PROBLEMS / "custom_tables.toml"),
                         "--out-dir", str(tmp_path)])
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["case"] == "VI-inferred"
        assert rep["boundaries"][0] == pytest.approx(0.93501, abs=1e-4)
        assert rep["boundaries"][1] == pytest.approx(4.27803, abs=1e-4)

    def test_verify_level_none_skips_checks(self, tmp_path):
        code = cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--out-dir", str(tmp_path),
                         "--verify-level", "none"])
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert "verification" not in rep

    def test_full_level_emits_oracle_csvs(self, tmp_path):
        code = cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--out-dir", str(tmp_path),
                         "--verify-level", "full"])
        assert code == 0
        mc = (tmp_path / "monte_carlo.csv").read_text().splitlines()
        assert mc[0].startswith("strategy,lower,upper,mean")
        assert len(mc) >= 5
        grid = (tmp_path / "psor_grid.csv").read_text().splitlines()
        assert grid[0] == "x,payoff,value"

    def test_preset_parsing(self):
        spec = cli.parse_diffusion({"preset": "ou", "rate": 1.0,
                                    "level": 0.5, "volatility": 0.4,
                                    "discount": 0.03})
        assert spec.preset == "OrnsteinUhlenbeck"
        spec = cli.parse_diffusion({"preset": "cir", "rate": 1.0,
                                    "level": 1.0, "volatility": 0.5,
                                    "discount": 0.04})
        assert spec.preset == "CIR"
        with pytest.raises(ostop.errors.ParseError):
            cli.parse_diffusion({"preset": "lorenz"})

    def test_plot_emitted(self, tmp_path):
        code = cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--out-dir", str(tmp_path), "--plot"])
        assert code == 0
        svg = (tmp_path / "value_function.svg").read_text()
        assert svg.lstrip().startswith("<?xml")

    def test_idempotent_outputs(self, tmp_path):
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            assert cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                             "--out-dir", str(d), "--seed", "123"]) == 0
        assert (d1 / "value_function.csv").read_bytes() == \
            (d2 / "value_function.csv").read_bytes()
        r1 = json.loads((d1 / "report.json").read_text())
        r2 = json.loads((d2 / "report.json").read_text())
        r1.pop("runtime_seconds"), r2.pop("runtime_seconds")
        assert r1 == r2

    def test_report_roundtrip_reverifies(self, tmp_path, gbm_spec, gbm_pair):
        # rebuild the value function from the emitted report and re-run the
        # variational checks: flags must reproduce
        assert cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--out-dir", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        comps = tuple(Component(c["lo"], c["hi"], c["A"], c["B"])
                      for c in rep["components"])
        stops = tuple((lo if lo is not None else -np.inf,
                       hi if hi is not None else np.inf)
                      for lo, hi in rep["stopping_region"])
        g = ostop.kinked_linear(2.0)
        part = RegionPartition(tuple((c.lo, c.hi) for c in comps), stops,
                               g.domain)
        vf = ValueFunction(part, comps, g, gbm_pair)
        mu = ostop.lop_measure(g, gbm_spec)
        rep2 = ostop.verify_solution(vf, g, mu, gbm_pair, spec=gbm_spec)
        for key, entry in rep["verification"].items():
            if key in rep2.entries:
                assert rep2.entries[key][0] == entry["passed"]


class TestSweepCommand:
    def test_regime_transitions(self, tmp_path):
        code = cli.main(["sweep", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--param", "c", "--from", "-1", "--to", "2",
                         "--step", "1.5", "--out-dir", str(tmp_path)])
        assert code == 0
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert rows[0] == "c,case,a,b,A,B,error"
        cases = [r.split(",")[1] for r in rows[1:]]
        assert cases == ["III", "VI-inferred", "VI-inferred"]

    def test_sweep_row_matches_run(self, tmp_path):
        cli.main(["sweep", str(PROBLEMS / "kinked_linear_c2.toml"),
                  "--param", "c", "--from", "2", "--to", "2", "--step", "1",
                  "--out-dir", str(tmp_path)])
        row = (tmp_path / "sweep.csv").read_text().splitlines()[1].split(",")
        run_dir = tmp_path / "run"
        cli.main(["solve", str(PROBLEMS / "kinked_linear_c2.toml"),
                  "--out-dir", str(run_dir)])
        rep = json.loads((run_dir / "report.json").read_text())
        assert float(row[2]) == pytest.approx(rep["boundaries"][0], rel=1e-12)
        assert float(row[3]) == pytest.approx(rep["boundaries"][1], rel=1e-12)

    def test_empty_range(self, tmp_path):
        code = cli.main(["sweep", str(PROBLEMS / "kinked_linear_c2.toml"),
                         "--param", "c", "--from", "1", "--to", "0",
                         "--step", "1", "--out-dir", str(tmp_path)])
        assert code == 0
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(rows) == 1   # header only
