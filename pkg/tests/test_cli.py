import json
from fractions import Fraction

import pytest

from timely_pir.cli import main, parse_config
from timely_pir.errors import InvalidConfigError
from timely_pir.peak import solve_peak

from conftest import make_config

F = Fraction

BASE = """\
# two servers, three messages
N = 2
M = 3
L = 8
mu = 1, 3
sigma2 = [4, 1]
r_min = 1/2
"""

FIG3 = """\
N = 3
M = 3
L = 72
mu = 1, 5, 10
sigma2 = 10, 5, 1
"""


@pytest.fixture
def write(tmp_path):
    def _write(text, name="system.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return _write


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


class TestConfigParsing:
    def test_parse(self):
        cfg = parse_config(BASE)
        assert (cfg.N, cfg.M, cfg.L) == (2, 3, 8)
        assert cfg.mu == [1, 3] and cfg.sigma2 == [4, 1] and cfg.r_min == F(1, 2)

    def test_decimal_rates_are_exact(self):
        cfg = parse_config(BASE.replace("r_min = 1/2", "r_min = 0.52"))
        assert cfg.r_min == F(13, 25)

    @pytest.mark.parametrize("bad, where", [
        ("M = 4", ":3:"),
        ("mu = 1", ":5:"),
        ("mu = 1, x", ":5:"),
        ("L = -8", ":4:"),
    ])
    def test_errors_carry_line_numbers(self, bad, where):
        key = bad.split("=")[0].strip()
        lines = [bad if line.startswith(key + " ") else line for line in BASE.splitlines()]
        with pytest.raises(InvalidConfigError, match=where):
            parse_config("\n".join(lines), "system.cfg")

    def test_unknown_and_duplicate_fields(self):
        with pytest.raises(InvalidConfigError, match="unknown field"):
            parse_config(BASE + "speed = 3\n")
        with pytest.raises(InvalidConfigError, match="twice"):
            parse_config(BASE + "N = 2\n")

    def test_missing_required_field(self):
        with pytest.raises(InvalidConfigError, match="'mu'"):
            parse_config("N = 2\nM = 3\nL = 8\n")


class TestCapacityCommand:
    def test_corner_table(self, write, capsys):
        assert main(["capacity", write(BASE), "--format", "structured"]) == 0
        recs = records(capsys.readouterr().out)
        assert recs[0]["C_PIR"] == "4/7"
        rates = [r["rate"] for r in recs if r["record"] == "corner"]
        assert rates == ["1/3", "1/2", "4/7", "4/7"]

    def test_traffic_ratio(self, write, capsys):
        assert main(["capacity", write(BASE), "--tau", "1/2,1/2"]) == 0
        assert "C(tau=(1/2, 1/2)) = 4/7" in capsys.readouterr().out

    def test_single_server(self, write, capsys):
        assert main(["capacity", write("N = 1\nM = 3\nL = 8\nmu = 1\n")]) == 0
        assert "C_PIR = 1/3" in capsys.readouterr().out

    def test_invalid_message_count(self, write, capsys):
        assert main(["capacity", write(BASE.replace("M = 3", "M = 5"))]) == 2
        assert "M" in capsys.readouterr().err


class TestSolveCommand:
    def test_peak(self, write, capsys):
        assert main(["solve", write(BASE), "--metric", "peak", "--format", "structured"]) == 0
        sol, ver = records(capsys.readouterr().out)
        assert sol["objective"] == "48" and sol["allocation"] == ["12", "4"]
        assert ver["passed"] is True and ver["gap"] == 0

    def test_field_order_is_fixed(self, write, capsys):
        main(["solve", write(BASE), "--format", "structured"])
        first = capsys.readouterr().out.splitlines()[0]
        keys = list(json.loads(first))
        assert keys[:4] == ["record", "metric", "branch", "N"]

    def test_average_symmetric_is_uniform(self, write, capsys):
        cfg = BASE.replace("mu = 1, 3", "mu = 2, 2").replace("sigma2 = [4, 1]", "sigma2 = 3, 3")
        assert main(["solve", write(cfg), "--metric", "avg", "--rmin", "4/7",
                     "--format", "structured"]) == 0
        sol = records(capsys.readouterr().out)[0]
        assert sol["allocation"] == ["7", "7"]

    def test_rate_above_capacity(self, write, capsys):
        assert main(["solve", write(BASE), "--rmin", "3/5"]) == 3
        assert "C_PIR=4/7" in capsys.readouterr().err

    def test_missing_rate(self, write, capsys):
        assert main(["solve", write(BASE.replace("r_min = 1/2\n", ""))]) == 2


class TestTradeoffCommand:
    def test_fig3_curves(self, write, capsys):
        assert main(["tradeoff", write(FIG3), "--rmin-points", "8", "--format", "structured"]) == 0
        rows = records(capsys.readouterr().out)
        assert len(rows) == 8
        peak = [F(r["peak"]) for r in rows]
        ideal = [float_of(r["avg_ideal"]) for r in rows]
        mixed = [float_of(r["avg_mixture"]) for r in rows]
        assert all(a <= b for a, b in zip(peak, peak[1:]))
        assert all(a <= b + 1e-9 for a, b in zip(ideal, ideal[1:]))
        assert all(m >= i - 1e-9 and (m - i) / i < 0.1
                   for m, i in zip(mixed, ideal))

    def test_byte_identical_rerun(self, write, capsys):
        path = write(FIG3)
        main(["tradeoff", path, "--rmin-grid", "1/3:9/13:1/10"])
        first = capsys.readouterr().out
        main(["tradeoff", path, "--rmin-grid", "1/3:9/13:1/10"])
        assert capsys.readouterr().out == first
        assert first.splitlines()[0].startswith("r_min,r_min_exact,peak")

    def test_single_point_at_lowest_rate(self, write, capsys):
        cfg = BASE.replace("sigma2 = [4, 1]", "sigma2 = 1, 1")
        cfg = cfg.replace("mu = 1, 3", "mu = 1, 2")
        assert main(["tradeoff", write(cfg), "--rmin-grid", "1/3:1/3:1",
                     "--format", "structured"]) == 0
        (row,) = records(capsys.readouterr().out)
        assert row["r_min_exact"] == "1/3"
        # never worse than all bits from the best single server (36.5)
        assert float_of(row["avg_ideal"]) <= 36.5
        expected = solve_peak(make_config([1, 2], [1, 1], r_min=F(1, 3)))
        assert F(row["peak"]) == expected.objective

    def test_grid_outside_range(self, write):
        assert main(["tradeoff", write(FIG3), "--rmin-grid", "1/3:4/5:1/5"]) == 3
        assert main(["tradeoff", write(FIG3), "--rmin-grid", "1/3:1/2"]) == 2


def float_of(x):
    return float(F(x)) if isinstance(x, str) else float(x)


class TestSimulateCommand:
    def test_deterministic_allocation(self, write, capsys):
        cfg = BASE.replace("sigma2 = [4, 1]", "sigma2 = 0, 0").replace("mu = 1, 3", "mu = 1, 2")
        assert main(["simulate", write(cfg), "--allocation", "8,6", "--epochs", "1000",
                     "--format", "structured"]) == 0
        rec = records(capsys.readouterr().out)[0]
        assert rec["empirical_peak"] == 40 and rec["empirical_avg"] == 30
        assert rec["families"] == ["deterministic", "deterministic"]

    def test_round_trip_from_solve(self, write, capsys, tmp_path):
        cfg = write(BASE.replace("r_min = 1/2", "r_min = 13/25"))
        main(["solve", cfg, "--format", "structured"])
        sol_path = tmp_path / "solution.jsonl"
        sol_path.write_text(capsys.readouterr().out)
        assert main(["simulate", cfg, "--policy", str(sol_path), "--epochs", "50000",
                     "--seed", "3", "--format", "structured"]) == 0
        rec = records(capsys.readouterr().out)[0]
        assert abs(rec["z_peak"]) < 4 and abs(rec["z_avg"]) < 4
        assert float_of(rec["analytic_avg"]) > float_of(rec["analytic_avg_ideal"])

    def test_fractional_allocation_rejected(self, write):
        assert main(["simulate", write(BASE), "--allocation", "7.5,6"]) == 2

    def test_bad_seed(self, write):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", write(BASE), "--seed", "abc"])
        assert exc.value.code == 2


class TestVerifyCommand:
    def test_peak_default_resolution(self, write, capsys):
        assert main(["verify", write(BASE)]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_average_coarse_resolution(self, write, capsys):
        assert main(["verify", write(BASE), "--metric", "avg", "--resolution", "L/8"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_corrupted_solution(self, write, capsys):
        assert main(["verify", write(BASE), "--corrupt"]) == 4
        out = capsys.readouterr().out
        assert "FAIL" in out and "rate[" in out
