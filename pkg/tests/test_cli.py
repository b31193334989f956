import json

import numpy as np
import pytest

from mmdtest import __version__
from mmdtest.cli import build_parser, main
from mmdtest.io import read_csv, write_csv
from mmdtest.kernel_core import GaussianParams
from mmdtest.null_approx import asymptotic_mean, asymptotic_variance


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code in (0, 2), err
    return json.loads(out)


@pytest.fixture
def csv_file(tmp_path):
    def make(values, name="data.csv", header=None):
        path = tmp_path / name
        lines = [header] if header else []
        lines += [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(values)]
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    return make


class TestTestCommand:
    def test_normal_data_mostly_accepted(self, capsys, csv_file):
        accepted = 0
        for seed in range(20):
            path = csv_file(np.random.default_rng(seed).standard_normal((500, 10)))
            res = run_json(capsys, "test", path, "--sigma", "dim-power:0.75", "--engine", "moment-chisq")["result"]
            accepted += not res["reject"]
        assert accepted >= 18

    def test_exponential_rejected(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(0).standard_exponential((200, 10)) - 1)
        code, out, _ = run(capsys, "test", path, "--sigma", "dim-power:0.75", "--exit-code")
        assert code == 2
        assert "True" in out

    def test_no_exit_code_flag(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(0).standard_exponential((200, 10)) - 1)
        assert run(capsys, "test", path, "--sigma", "dim-power:0.75")[0] == 0

    def test_single_row(self, capsys, csv_file):
        res = run_json(capsys, "test", csv_file([[1.5, -2.0, 3.0]]), "--sigma", "explicit:1")["result"]
        assert res["statistic"] == 0.0
        assert res["reject"] is False
        assert res["p_value"] == 1.0

    def test_json_envelope(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(1).standard_normal((40, 3)))
        doc = run_json(capsys, "test", path, "--seed", "9")
        assert set(doc) == {"command", "config", "result", "seed", "version"}
        assert doc["command"] == "test" and doc["seed"] == 9 and doc["version"] == __version__
        assert doc["config"]["engine"] == "moment_chisq"
        assert doc["config"]["sigma_rule"] == "median"
        assert doc["result"]["sigma_rule"] == "median_heuristic"

    @pytest.mark.parametrize("engine", ["moment-chisq", "gram-chisq", "spec-sum", "monte-carlo"])
    def test_engines_deterministic(self, capsys, csv_file, engine):
        path = csv_file(np.random.default_rng(2).standard_normal((30, 2)))
        argv = ["test", path, "--engine", engine, "--iters", "200", "--l-gram", "100", "--l-spec", "100", "--spec-draws", "1000", "--json"]
        _, a, _ = run(capsys, *argv)
        _, b, _ = run(capsys, *argv)
        _, c, _ = run(capsys, *argv, "--threads", "3")
        assert a == b
        assert json.loads(a)["result"] == json.loads(c)["result"]
        assert 0 < json.loads(a)["result"]["p_value"] <= 1

    def test_monte_carlo_p_value_plug_in(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(3).standard_exponential((100, 2)))
        res = run_json(capsys, "test", path, "--engine", "monte-carlo", "--iters", "200")["result"]
        # p = (1 + count) / (iters + 1): a positive multiple of 1/201
        k = res["p_value"] * 201
        assert k >= 1 and k == pytest.approx(round(k), abs=1e-9)

    def test_csv_output(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(4).standard_normal((20, 2)))
        code, out, _ = run(capsys, "test", path, "--csv")
        header, row = out.strip().splitlines()
        assert "statistic" in header.split(",")
        assert len(header.split(",")) == len(row.split(","))

    def test_text_six_digits(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(5).standard_normal((20, 2)))
        _, out, _ = run(capsys, "test", path, "--sigma", "explicit:0.123456789")
        assert "0.123457" in out and "0.1234567" not in out

    def test_header_and_transpose(self, capsys, csv_file):
        vals = np.random.default_rng(6).standard_normal((25, 3))
        a = run_json(capsys, "test", csv_file(vals, header="a,b,c"), "--header")["result"]
        b = run_json(capsys, "test", csv_file(vals.T, name="t.csv"), "--transpose")["result"]
        assert a["statistic"] == b["statistic"] and (a["n"], a["d"]) == (25, 3)


class TestErrors:
    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "test", str(tmp_path / "nope.csv"))
        assert code == 1 and "cannot read" in err

    def test_non_numeric_cell(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3,x\n")
        code, _, err = run(capsys, "test", str(path))
        assert code == 1 and "row 2, column 2" in err

    @pytest.mark.parametrize("cell", ["nan", "inf", "-Infinity"])
    def test_non_finite(self, capsys, tmp_path, cell):
        path = tmp_path / "bad.csv"
        path.write_text(f"1,2\n{cell},4\n")
        code, _, err = run(capsys, "test", str(path))
        assert code == 1 and "row 2, column 1" in err

    def test_ragged(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3\n")
        assert run(capsys, "test", str(path))[0] == 1

    def test_median_needs_two_rows(self, capsys, csv_file):
        code, _, err = run(capsys, "test", csv_file([[1.0, 2.0]]))
        assert code == 1 and "two rows" in err

    def test_constant_columns_median(self, capsys, csv_file):
        assert run(capsys, "test", csv_file(np.ones((5, 2))))[0] == 1

    def test_unknown_flag(self, capsys, csv_file):
        with pytest.raises(SystemExit) as exc:
            main(["test", csv_file([[1.0], [2.0]]), "--bogus"])
        assert exc.value.code == 1

    @pytest.mark.parametrize(
        "argv",
        [
            ["test", "x.csv", "--alpha", "1.5"],
            ["test", "x.csv", "--sigma", "explicit:-1"],
            ["test", "x.csv", "--sigma", "wide"],
            ["power-sim", "--family", "exponential", "--d", "2"],
            ["accuracy", "--d", "2"],
            [],
        ],
    )
    def test_bad_usage(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1

    def test_invalid_combinations(self, capsys):
        assert run(capsys, "null-quantile", "--d", "2")[0] == 1
        assert run(capsys, "null-quantile", "--d", "2", "--n", "10", "--iters", "50")[0] == 1
        assert run(capsys, "power-sim", "--family", "gaussian", "--d", "2", "--n", "10", "--sigma", "median")[0] == 1
        assert run(capsys, "power-sim", "--family", "gaussian", "--d", "2", "--n", "10", "--reps", "50")[0] == 1
        assert run(capsys, "accuracy", "--d", "2", "--n", "10", "--iters", "100")[0] == 1
        assert run(capsys, "accuracy", "--d", "2", "--n", "10", "--engines", "monte-carlo")[0] == 1

    def test_bad_env_seed(self, capsys, csv_file, monkeypatch):
        monkeypatch.setenv("MMDTEST_SEED", "abc")
        assert run(capsys, "test", csv_file([[0.0], [1.0]]))[0] == 1

    def test_help_lists_flags(self):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices
        for name, p in sub.items():
            text = p.format_help()
            for action in p._actions:
                for opt in action.option_strings:
                    assert opt in text, (name, opt)


class TestMoments:
    def test_identity_reduction_d1(self, capsys, csv_file):
        # rows -1, 1: mean 0, biased variance 1
        res = run_json(capsys, "moments", csv_file([[-1.0], [1.0]]), "--sigma", "explicit:0.5")["result"]
        g = 1 + 4 * 0.5
        expected = 1 - g**-0.5 * (1 + 2 * 0.5 / g + 2 * 0.25 / g**2 + 4 * 0.25 / g**2)
        assert res["e_z"] == pytest.approx(expected, rel=1e-12)
        p = GaussianParams.standard(1)
        assert res["v_z"] == pytest.approx(asymptotic_variance(p, 0.5), rel=1e-12)
        assert res["c"] == pytest.approx(res["v_z"] / (2 * res["e_z"]))
        assert res["degenerate"] is False

    def test_degenerate(self, capsys, caplog, csv_file):
        code, out, _ = run(capsys, "moments", csv_file(np.full((6, 3), 2.5)), "--sigma", "explicit:1")
        assert code == 0
        assert "degenerate" in out and "degenerate" in caplog.text
        res = run_json(capsys, "moments", csv_file(np.full((6, 3), 2.5)), "--sigma", "explicit:1")["result"]
        assert res["e_z"] == 0.0 and res["c"] is None and res["degenerate"] is True

    def test_text_matches_json(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(7).standard_normal((50, 4)))
        res = run_json(capsys, "moments", path, "--sigma", "dim-power:1")["result"]
        _, out, _ = run(capsys, "moments", path, "--sigma", "dim-power:1")
        text = dict(line.split(None, 1) for line in out.strip().splitlines())
        for key, jkey in [("E[Z]", "e_z"), ("V[Z]", "v_z"), ("c", "c"), ("r", "r"), ("t_0.05", "critical_value")]:
            assert float(text[key]) == pytest.approx(res[jkey], rel=1e-5)

    def test_dump_round_trip(self, capsys, csv_file, tmp_path):
        vals = np.random.default_rng(8).standard_normal((13, 3)) * 1e-7 + np.pi
        src = csv_file(vals, header="x,y,z")
        dump = tmp_path / "dump.csv"
        assert run(capsys, "moments", src, "--header", "--dump", str(dump))[0] == 0
        assert np.array_equal(read_csv(dump).values, vals)

    def test_write_csv_round_trip(self, tmp_path):
        vals = np.array([[0.1, 1e-300, -2.5e300], [1 / 3, -0.0, 7.0]])
        write_csv(vals, tmp_path / "x.csv")
        assert np.array_equal(read_csv(tmp_path / "x.csv").values, vals)


class TestSimulationCommands:
    def test_accuracy_byte_identical(self, capsys):
        argv = ["accuracy", "--d", "10", "--n", "500", "--sigma", "dim-power:1", "--seed", "7", "--iters", "500", "--json"]
        _, a, _ = run(capsys, *argv)
        _, b, _ = run(capsys, *argv)
        assert a == b
        doc = json.loads(a)
        assert "timing" not in doc["result"]
        assert set(doc["result"]["quantiles"]) == {"moment_chisq", "gram_chisq", "spec_sum"}

    def test_accuracy_timing_and_empty(self, capsys):
        doc = run_json(capsys, "accuracy", "--d", "2", "--n", "20", "--iters", "500", "--engines", "moment-chisq", "--timing")
        assert set(doc["result"]["timing"]) == {"moment_chisq"}
        doc = run_json(capsys, "accuracy", "--d", "2", "--n", "20", "--iters", "500", "--engines", "")
        assert doc["result"]["quantiles"] == {}

    def test_env_seed(self, capsys, monkeypatch):
        argv = ["null-quantile", "--d", "2", "--n", "20", "--iters", "200", "--json"]
        monkeypatch.setenv("MMDTEST_SEED", "5")
        _, a, _ = run(capsys, *argv)
        _, b, _ = run(capsys, *argv, "--seed", "5")
        _, c, _ = run(capsys, *argv, "--seed", "6")
        assert a == b != c
        assert json.loads(a)["seed"] == 5

    def test_null_quantile_reference_d10(self, capsys):
        res = run_json(capsys, "null-quantile", "--d", "10", "--n", "500", "--sigma", "dim-power:0.875", "--iters", "2000", "--alpha", "0.05")["result"]
        assert res["quantile"] == pytest.approx(0.51874, abs=0.03)
        ref = GaussianParams.standard(10)
        assert res["mean"] == pytest.approx(asymptotic_mean(ref, 10**-0.875), rel=0.05)

    def test_null_quantile_from_input(self, capsys, csv_file):
        path = csv_file(np.random.default_rng(9).standard_normal((40, 3)))
        res = run_json(capsys, "null-quantile", "--input", path, "--iters", "200", "--samples")["result"]
        assert (res["n"], res["d"], res["reference"]) == (40, 3, "sample")
        assert len(res["samples"]) == 200 and res["samples"] == sorted(res["samples"])
        assert run(capsys, "null-quantile", "--input", path, "--d", "4")[0] == 1

    def test_power_sim_small(self, capsys):
        doc = run_json(capsys, "power-sim", "--family", "exponential", "--d", "5", "--n", "100", "--reps", "100", "--null-iters", "200")
        assert doc["result"]["power"] > 0.8
        doc = run_json(capsys, "power-sim", "--family", "exponential", "--d", "5", "--n", "100", "--reps", "100", "--threshold", "moment-chisq")
        assert doc["result"]["threshold"] is None
        assert doc["result"]["threshold_source"] == "moment_chisq"

    @pytest.mark.slow
    def test_power_sim_exponential_d300(self, capsys):
        res = run_json(capsys, "power-sim", "--family", "exponential", "--d", "300", "--n", "200", "--sigma", "dim-power:1", "--reps", "200")["result"]
        assert 0.84 <= res["power"] <= 0.96
