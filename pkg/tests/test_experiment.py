import csv

import numpy as np
import pytest
import yaml

from nrext_aec.cli import main
from nrext_aec.experiment import (RESULT_COLUMNS, ExperimentConfig, build_scenario,
                                  emit_figure_data, load_config, read_results, run_experiment)
from nrext_aec.metrics import band_powers

SMALL = ["scenarios.count=1", "grid.snr_db=[0.0]", "grid.ser_db=[0.0]", "grid.lf=[128, 384]",
         "audio.duration_s=4.0"]


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = load_config(None, SMALL)
    return run_experiment(cfg, out), out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.scenarios.seed_list() == [0, 1, 2, 3, 4]
        assert cfg.grid.lf == [128, 384, 640, 896, 1150]
        assert cfg.grid.snr_db == [-15.0, -7.5, 0.0, 7.5, 15.0]
        assert (cfg.nlms.step_size, cfg.nlms.regularization) == (0.1, 1e-6)
        assert cfg.gevd.smoothing == 0.995

    def test_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"grid": {"lf": [256]}, "nlms": {"step_size": 0.2}}))
        cfg = load_config(path, ["grid.lf=[512, 1024]", "io.output_dir=elsewhere"])
        assert cfg.grid.lf == [512, 1024]
        assert cfg.nlms.step_size == 0.2
        assert cfg.io.output_dir == "elsewhere"

    def test_env_output_dir(self, monkeypatch):
        monkeypatch.setenv("NREXT_AEC_OUTPUT_DIR", "/tmp/from_env")
        assert load_config().io.output_dir == "/tmp/from_env"
        assert load_config(None, ["io.output_dir=x"]).io.output_dir == "x"

    @pytest.mark.parametrize("data", [
        {"grid": {"lfs": [1]}},
        {"extras": {}},
        {"grid": {"lf": [0]}},
        {"grid": {"designs": ["AEC-NR"]}},
        {"grid": {"modes": ["online"]}},
        {"grid": {"snr_db": []}},
        {"scenarios": {"count": 2, "seeds": [1]}},
        {"gevd": {"full_regime": "some"}},
        {"audio": {"speech": "/no/such/file.wav"}},
    ])
    def test_rejects(self, data):
        with pytest.raises((ValueError, FileNotFoundError)):
            ExperimentConfig.from_dict(data)

    def test_bad_override_syntax(self):
        with pytest.raises(ValueError):
            load_config(None, ["grid.lf"])

    def test_round_trip(self):
        cfg = load_config(None, SMALL)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


class TestScenario:
    def test_adaptive_prefix(self):
        cfg = load_config(None, ["audio.duration_s=4.0", "audio.adaptive_warmup_s=4.0"])
        tracks, vad, _, mask = build_scenario(cfg, 0, 0.0, 0.0, "adaptive")
        assert tracks.length == 8 * 16000
        assert not mask[:4 * 16000].any() and mask[4 * 16000:].all()
        # speech returns in the measured cycle
        assert vad.vad_s[4 * 16000:5 * 16000].any()

    def test_converged_measures_everything(self):
        cfg = load_config(None, ["audio.duration_s=4.0"])
        tracks, _, _, mask = build_scenario(cfg, 0, 0.0, 0.0)
        assert tracks.length == 4 * 16000 and mask.all()

    def test_seeds_differ(self):
        cfg = load_config(None, ["audio.duration_s=4.0"])
        a = build_scenario(cfg, 0, 0.0, 0.0)[0]
        b = build_scenario(cfg, 1, 0.0, 0.0)[0]
        assert not np.allclose(a.s, b.s)
        assert band_powers(a.s[0]).shape == (18,)


class TestRun:
    def test_rows(self, small_run):
        table, out = small_run
        assert len(table.rows) == 4 and len(table.aggregates) == 4
        rows = read_csv(out / "results.csv")
        assert list(rows[0]) == RESULT_COLUMNS
        assert [r["scenario_id"] for r in rows] == ["0"] * 4 + ["mean"] * 4
        assert {r["design"] for r in rows} == {"NR-AEC", "NRext-AEC"}
        mean = table.mean(design="NRext-AEC", lf=128)
        assert mean["std_delta_ser_i"] == 0.0
        assert read_csv(out / "errors.csv") == []
        assert len(read_csv(out / "timings.csv")) == 4
        assert yaml.safe_load((out / "config.yaml").read_text())["grid"]["lf"] == [128, 384]

    def test_nr_metrics_shared_across_lf(self, small_run):
        table, _ = small_run
        a, b = table.select(design="NR-AEC")
        assert a["delta_snr_i"] == b["delta_snr_i"] and a["sd_i"] == b["sd_i"]

    def test_rerun_byte_identical(self, small_run, tmp_path):
        _, out = small_run
        run_experiment(load_config(None, SMALL), tmp_path)
        assert (tmp_path / "results.csv").read_bytes() == (out / "results.csv").read_bytes()

    def test_error_isolation(self, tmp_path, monkeypatch):
        import nrext_aec.experiment as ex

        real = ex.prepare_front_end

        def flaky(design, *args, **kwargs):
            if design == "NR-AEC":
                raise np.linalg.LinAlgError("forced")
            return real(design, *args, **kwargs)

        monkeypatch.setattr(ex, "prepare_front_end", flaky)
        table = run_experiment(load_config(None, SMALL + ["grid.lf=[128]"]), tmp_path)
        errors = read_csv(tmp_path / "errors.csv")
        assert len(errors) == 1 and errors[0]["design"] == "NR-AEC"
        assert "LinAlgError: forced" in errors[0]["error"]
        assert [r["design"] for r in table.rows] == ["NRext-AEC"]

    def test_audio_export(self, tmp_path):
        run_experiment(load_config(None, SMALL + ["grid.lf=[128]", "grid.designs=[NR-AEC]",
                                                  "io.write_audio=true"]), tmp_path)
        manifest = read_csv(tmp_path / "audio_manifest.csv")
        assert len(manifest) == 1
        assert (tmp_path / manifest[0]["path"] / "output.wav").is_file()


class TestFigures:
    def rows(self):
        rows = []
        for sid in range(2):
            for design in ("NR-AEC", "NRext-AEC"):
                for snr in (-15.0, 15.0):
                    for ser in (-15.0, 15.0):
                        for lf in (128, 1150):
                            rows.append({"scenario_id": sid, "design": design, "mode": "converged",
                                         "snr_in_db": snr, "ser_in_db": ser, "lf": lf,
                                         "delta_snr_i": 1.0 + sid, "delta_ser_i": lf / 100 + sid,
                                         "sd_i": 0.5, "seed": sid})
        return rows

    def test_nr_performance(self, tmp_path):
        path = emit_figure_data(self.rows(), "nr_performance", tmp_path / "f.csv")
        rows = read_csv(path)
        assert list(rows[0]) == ["design", "snr_in_db", "ser_in_db", "mean_delta_snr_i",
                                 "std_delta_snr_i", "mean_sd_i", "std_sd_i"]
        assert len(rows) == 2 * 2 * 2
        assert rows[0]["mean_delta_snr_i"] == "1.500000" and rows[0]["std_delta_snr_i"] == "0.500000"

    def test_aec_converged(self, tmp_path):
        rows = read_csv(emit_figure_data(self.rows(), "aec_converged", tmp_path / "f.csv"))
        assert list(rows[0]) == ["design", "ser_in_db", "snr_in_db", "lf", "mean_delta_ser_i",
                                 "std_delta_ser_i"]
        assert len(rows) == 2 * 2 * 2 * 2
        assert {r["lf"] for r in rows} == {"128", "1150"}

    def test_empty_adaptive_header_only(self, tmp_path):
        path = emit_figure_data(self.rows(), "aec_adaptive", tmp_path / "f.csv")
        assert path.read_text().splitlines() == [
            "design,ser_in_db,snr_in_db,lf,mean_delta_ser_i,std_delta_ser_i"]

    def test_unknown_figure(self, tmp_path):
        with pytest.raises(ValueError):
            emit_figure_data([], "fig9", tmp_path / "f.csv")

    def test_from_results_file(self, small_run, tmp_path):
        _, out = small_run
        assert len(read_results(out / "results.csv")) == 4
        rows = read_csv(emit_figure_data(out / "results.csv", "aec_converged", tmp_path / "a.csv"))
        assert len(rows) == 4


class TestCli:
    def test_run_and_figures(self, tmp_path, capsys):
        args = ["run"]
        for s in SMALL + ["grid.lf=[128]"]:
            args += ["--set", s]
        assert main(args + ["--output-dir", str(tmp_path)]) == 0
        assert (tmp_path / "results.csv").is_file()
        assert main(["figures", str(tmp_path / "results.csv")]) == 0
        for fig in ("nr_performance", "aec_converged", "aec_adaptive"):
            assert (tmp_path / f"{fig}.csv").is_file()
        assert "result rows" in capsys.readouterr().out

    def test_verify(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out

    def test_usage_error(self):
        with pytest.raises(SystemExit):
            main(["bogus"])
