import numpy as np
import pytest

import ligandsense as ls
from ligandsense.cli import HEADERS, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


FAST = ["--trials", "60", "--samples", "400"]


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "nonsense")
        assert code == 1
        assert "usage" in err.lower()

    def test_unknown_flag_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "simulate", "--frobnicate")
        assert code == 1
        assert "usage" in err.lower()

    def test_missing_sweep_grid_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "sweep", "--var", "chi")
        assert code == 1

    def test_numeric_config_error_is_two(self, capsys):
        code, _, err = run_cli(capsys, "crlb", "--chi", "0.5")
        assert code == 2
        assert "similarity" in err

    def test_success_is_zero(self, capsys):
        code, out, _ = run_cli(capsys, "simulate", "--seed", "1", "--samples", "5")
        assert code == 0
        assert out.startswith("record,index,value")


class TestSchemas:
    def test_simulate_header_and_shape(self, capsys):
        _, out, _ = run_cli(capsys, "simulate", "--seed", "3", "--samples", "10")
        lines = out.strip().split("\n")
        assert lines[0] == ",".join(HEADERS["simulate"])
        assert len(lines) == 1 + 2 + 10

    def test_estimate_header(self, capsys):
        _, out, _ = run_cli(capsys, "estimate", "--config", "defaults", "--seed", "2",
                            "--samples", "500")
        lines = out.strip().split("\n")
        assert lines[0] == ",".join(HEADERS["estimate"])
        assert len(lines) == 1 + 5

    def test_estimate_all_estimator_kinds(self, capsys):
        code, out, _ = run_cli(capsys, "estimate", "--seed", "2", "--samples", "500",
                               "--estimators", "unbiased,biased,nu_opt")
        assert code == 0
        lines = out.strip().split("\n")
        assert len(lines) == 1 + 15
        kinds = {line.split(",")[0] for line in lines[1:]}
        assert kinds == {"unbiased", "biased", "nu_opt"}

    def test_crlb_header_and_m1_fisher(self, capsys):
        _, out, _ = run_cli(capsys, "crlb", "--M", "1", "--samples", "250")
        lines = out.strip().split("\n")
        assert lines[0] == ",".join(HEADERS["crlb"])
        row = lines[1].split(",")
        assert float(row[2]) == pytest.approx(250.0, rel=1e-8)

    def test_sweep_header_and_row_count(self, capsys):
        _, out, _ = run_cli(capsys, "sweep", "--var", "M", "--from", "2", "--to", "10",
                            *FAST)
        lines = out.strip().split("\n")
        assert lines[0] == "var,estimator,analytic,mc,mc_se,crlb"
        assert len(lines) == 1 + 9

    def test_kpr_header(self, capsys):
        _, out, _ = run_cli(capsys, "kpr", "--trials", "30", "--samples", "1500")
        assert out.split("\n")[0] == ",".join(HEADERS["kpr"])

    def test_crn_header(self, capsys):
        _, out, _ = run_cli(capsys, "crn", "--samples", "1000", "--seed", "4")
        assert out.split("\n")[0] == ",".join(HEADERS["crn"])

    def test_optimize_nu_header(self, capsys):
        _, out, _ = run_cli(capsys, "optimize-nu")
        lines = out.strip().split("\n")
        assert lines[0] == ",".join(HEADERS["optimize-nu"])
        nu = float(lines[1].split(",")[0])
        assert 2.0 <= nu <= 4.0


class TestDeterminism:
    @pytest.mark.parametrize("argv", [
        ["simulate", "--seed", "7", "--samples", "50"],
        ["estimate", "--config", "defaults", "--seed", "7", "--samples", "300"],
        ["crlb", "--M", "3", "--samples", "200"],
        ["sweep", "--var", "M", "--from", "2", "--to", "3", *FAST, "--seed", "7"],
        ["kpr", "--trials", "25", "--samples", "800", "--seed", "7"],
        ["crn", "--samples", "700", "--seed", "7"],
        ["optimize-nu", "--M", "4"],
    ])
    def test_repeat_runs_are_byte_identical(self, capsys, argv):
        _, first, _ = run_cli(capsys, *argv)
        _, second, _ = run_cli(capsys, *argv)
        assert first == second

    def test_thread_env_does_not_change_bytes(self, capsys, monkeypatch):
        argv = ["sweep", "--var", "chi", "--from", "2", "--to", "6", "--points", "3",
                *FAST, "--seed", "9"]
        monkeypatch.setenv("LIGANDSENSE_THREADS", "1")
        _, serial, _ = run_cli(capsys, *argv)
        monkeypatch.setenv("LIGANDSENSE_THREADS", "4")
        _, parallel, _ = run_cli(capsys, *argv)
        assert serial == parallel


class TestFilesAndConfig:
    def test_out_writes_same_bytes_as_stdout(self, tmp_path, capsys):
        path = tmp_path / "dump.csv"
        _, out, _ = run_cli(capsys, "simulate", "--seed", "5", "--samples", "20")
        code = main(["simulate", "--seed", "5", "--samples", "20", "--out", str(path)])
        capsys.readouterr()
        assert code == 0
        assert path.read_text() == out

    def test_estimate_reads_simulate_dump(self, tmp_path, capsys):
        dump = tmp_path / "obs.csv"
        assert main(["simulate", "--seed", "8", "--samples", "400",
                     "--out", str(dump)]) == 0
        capsys.readouterr()
        code, out, _ = run_cli(capsys, "estimate", "--data", str(dump),
                               "--samples", "400")
        assert code == 0
        values = [float(line.split(",")[3]) for line in out.strip().split("\n")[1:]]
        assert np.isfinite(values).all()

    def test_config_file_round_trip(self, tmp_path, capsys):
        config = ls.ScenarioConfig(n_types=3, similarity=4.0, n_samples=600,
                                   trials=40, seed=3)
        path = tmp_path / "scenario.yaml"
        config.save(path)
        code, out, _ = run_cli(capsys, "estimate", "--config", str(path))
        assert code == 0
        assert len(out.strip().split("\n")) == 1 + 3

    @pytest.mark.parametrize("argv", [
        ["simulate", "--seed", "2", "--samples", "50"],
        ["estimate", "--seed", "2", "--samples", "300"],
        ["crlb", "--M", "2", "--samples", "100"],
        ["sweep", "--var", "M", "--from", "2", "--to", "3",
         "--trials", "30", "--samples", "300"],
        ["kpr", "--trials", "20", "--samples", "500"],
        ["crn", "--samples", "500", "--seed", "2"],
        ["optimize-nu", "--M", "3"],
    ])
    def test_plot_writes_svg(self, tmp_path, capsys, argv):
        svg = tmp_path / "figure.svg"
        code = main([*argv, "--plot", str(svg), "--out", str(tmp_path / "t.csv")])
        capsys.readouterr()
        assert code == 0
        assert svg.read_text().lstrip().startswith("<?xml")
