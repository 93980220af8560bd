import numpy as np
import pytest

from bregfit.cli import cli_main, parse_config_file
from bregfit.models import BoltzmannParams, boltzmann_energies, boltzmann_exact_log_partition
from bregfit.sampling import RngStream, enumerate_states, sample_discrete_exact


def run_cli(*argv):
    return cli_main(list(argv))


class TestConfigFile:
    def test_parse_key_value_lines(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\ntrials = 2\n\nsample_sizes = 500, 1000\n")
        entries = parse_config_file(cfg)
        assert entries == {"trials": "2", "sample_sizes": "500, 1000"}

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("trials two\n")
        with pytest.raises(ValueError):
            parse_config_file(cfg)

    def test_unknown_key_fails_run(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not_a_field = 3\n")
        code = run_cli("fig1", "--config", str(cfg), "--out", str(tmp_path / "o.csv"))
        assert code != 0
        assert "error:" in capsys.readouterr().err

    def test_config_applies_and_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "trials = 1\nsample_sizes = 500\nmethods = nce_bernoulli\nmaster_seed = 4\n"
        )
        out = tmp_path / "a.csv"
        assert run_cli("fig1", "--config", str(cfg), "--out", str(out), "--no-figures") == 0
        assert len(out.read_text().splitlines()) == 2  # header + one record

        out2 = tmp_path / "b.csv"
        assert (
            run_cli(
                "fig1", "--config", str(cfg), "--out", str(out2),
                "--trials", "2", "--no-figures",
            )
            == 0
        )
        assert len(out2.read_text().splitlines()) == 3


class TestFig1Command:
    def test_byte_identical_reruns(self, tmp_path):
        args = (
            "fig1", "--trials", "1", "--seed", "7",
            "--sample-sizes", "500", "--methods", "nce_bernoulli,ratio_matching",
            "--no-figures",
        )
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run_cli(*args, "--out", str(a)) == 0
        assert run_cli(*args, "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a_summary.csv").read_bytes() == (
            tmp_path / "b_summary.csv"
        ).read_bytes()

    def test_outputs_written(self, tmp_path):
        out = tmp_path / "study" / "fig1.csv"
        out.parent.mkdir()
        code = run_cli(
            "fig1", "--trials", "1", "--seed", "3", "--sample-sizes", "500",
            "--methods", "nce_bernoulli", "--out", str(out),
        )
        assert code == 0
        assert out.exists()
        assert (out.parent / "fig1_summary.csv").exists()
        assert (out.parent / "fig1_plot.txt").exists()
        assert (out.parent / "fig1.png").exists()

    def test_plot_script_is_runnable_python(self, tmp_path):
        import subprocess
        import sys

        out = tmp_path / "fig1.csv"
        assert (
            run_cli(
                "fig1", "--trials", "1", "--seed", "3", "--sample-sizes", "500,1000",
                "--methods", "nce_bernoulli", "--out", str(out), "--no-figures",
            )
            == 0
        )
        script = out.parent / "fig1_plot.txt"
        proc = subprocess.run(
            [sys.executable, str(script)], cwd=tmp_path, capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "fig1.png").exists()

    def test_unwritable_output_fails_cleanly(self, tmp_path, capsys):
        code = run_cli(
            "fig1", "--trials", "1", "--sample-sizes", "500",
            "--methods", "nce_bernoulli",
            "--out", str(tmp_path / "missing_dir" / "x.csv"),
        )
        assert code != 0
        assert "error:" in capsys.readouterr().err


class TestFig2Command:
    def test_small_run_outputs(self, tmp_path):
        out = tmp_path / "fig2.csv"
        code = run_cli(
            "fig2", "--trials", "1", "--seed", "2", "--td", "1200",
            "--group-sizes", "4", "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "group_size,trial,error,status,wall_ms"
        assert len(lines) == 2
        assert (tmp_path / "fig2_summary.csv").exists()
        assert (tmp_path / "fig2.png").exists()


class TestFitCommand:
    def _export_boltzmann_sample(self, path, seed=13, T=4000, n=4):
        gen = RngStream(seed, 0).generator()
        params = BoltzmannParams(
            0.5 * gen.standard_normal(n * (n - 1) // 2),
            0.5 * gen.standard_normal(n),
            0.0,
        )
        states = enumerate_states(n)
        log_w = boltzmann_energies(params.coupling_matrix(), params.b, states)
        idx = sample_discrete_exact(log_w, RngStream(seed, 1), T)
        np.savetxt(path, states[idx], delimiter=",", fmt="%d")
        c = -boltzmann_exact_log_partition(params.coupling_matrix(), params.b)
        return BoltzmannParams(params.upper_tri_m, params.b, c)

    def test_round_trip_recovers_known_model(self, tmp_path):
        data = tmp_path / "data.csv"
        star = self._export_boltzmann_sample(data)
        out = tmp_path / "fit.csv"
        code = run_cli(
            "fit", "--model", "boltzmann", "--estimator", "nce",
            "--data", str(data), "--seed", "5", "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().splitlines()
        fields = {ln.split(",")[0]: ln.split(",")[1:] for ln in lines[1:]}
        m_hat = np.array([float(v) for v in fields["upper_tri_m"]])
        b_hat = np.array([float(v) for v in fields["b"]])
        c_hat = float(fields["c"][0])
        err = (
            np.sum((m_hat - star.upper_tri_m) ** 2)
            + np.sum((b_hat - star.b) ** 2)
            + (c_hat - star.c) ** 2
        )
        assert err < 0.5

    def test_ratio_matching_reports_unidentified_c(self, tmp_path, capsys):
        data = tmp_path / "data.csv"
        self._export_boltzmann_sample(data, T=1000)
        code = run_cli(
            "fit", "--model", "boltzmann", "--estimator", "ratio_matching",
            "--data", str(data), "--seed", "5",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "c,nan" in out

    def test_missing_data_file_fails(self, tmp_path, capsys):
        code = run_cli(
            "fit", "--model", "boltzmann", "--data", str(tmp_path / "nope.csv")
        )
        assert code != 0
        assert "error:" in capsys.readouterr().err

    def test_direct_estimator_with_mixture_noise(self, tmp_path, capsys):
        data = tmp_path / "data.csv"
        self._export_boltzmann_sample(data, T=1500)
        code = run_cli(
            "fit", "--model", "boltzmann", "--estimator", "direct",
            "--noise", "mixture", "--components", "2", "--nu", "5",
            "--data", str(data), "--seed", "5",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("# model=boltzmann estimator=direct")

    def test_ica_poe_fit(self, tmp_path, capsys):
        from bregfit.sampling import sample_ica

        gen = RngStream(14, 0).generator()
        B = gen.standard_normal((3, 3))
        while np.linalg.cond(B) > 20:
            B = gen.standard_normal((3, 3))
        data = tmp_path / "ica.csv"
        np.savetxt(data, sample_ica(B, RngStream(14, 1), 600), delimiter=",")
        code = run_cli(
            "fit", "--model", "ica_poe", "--data", str(data),
            "--experts", "3", "--nu", "2", "--seed", "5",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "b_3," in out and "c," in out


class TestValidateCommand:
    def test_validate_passes(self, capsys):
        assert run_cli("validate", "--seed", "1") == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "FAIL" not in out


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        assert run_cli("fig1", "--bogus") != 0

    def test_unknown_subcommand(self, capsys):
        assert run_cli("nope") != 0

    def test_missing_subcommand(self, capsys):
        assert run_cli() != 0
