"""End-to-end command-line runs, all in-process through cli.main."""
import json

import pytest

from conftest import GOLDEN_SEED, GOLDEN_SIDE, calibration_array
from parkloc.cli import main
from parkloc.imaging import save_grayscale_png


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Corpus + index + localize output for a small identity scene."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    index = root / "index"
    run = root / "run"
    assert main(["synth", "--out", str(corpus), "--seed", "5", "--sections", "4",
                 "--churn", "0"]) == 0
    assert main(["index", "--manifest", str(corpus / "gallery_manifest.txt"),
                 "--detections", str(corpus / "gallery_detections.txt"),
                 "--out", str(index), "--target-long-side", "320"]) == 0
    assert main(["localize", "--queries", str(corpus / "query_manifest.txt"),
                 "--detections", str(corpus / "query_detections.txt"),
                 "--index", str(index), "--out", str(run),
                 "--target-long-side", "320"]) == 0
    return root


class TestPipeline:
    def test_all_artifacts_exist(self, workdir):
        assert (workdir / "corpus" / "scene_spec.json").is_file()
        assert (workdir / "index" / "metadata.json").is_file()
        assert (workdir / "index" / "config.json").is_file()
        for name in ("results.txt", "counts.csv", "counts_raw.csv"):
            assert (workdir / "run" / name).is_file()

    def test_identity_scene_scores_perfectly(self, workdir, tmp_path, capsys):
        rc = main(["evaluate", "--results", str(workdir / "run"),
                   "--queries", str(workdir / "corpus" / "query_manifest.txt"),
                   "--out", str(tmp_path / "report")])
        assert rc == 0
        assert "accuracy 1.000 (4/4)" in capsys.readouterr().out
        summary = (tmp_path / "report" / "summary.txt").read_text()
        assert "accuracy  1.000" in summary
        assert (tmp_path / "report" / "verdicts.csv").is_file()
        assert (tmp_path / "report" / "ratio_histogram.csv").is_file()

    def test_results_echo_effective_config(self, workdir):
        lines = (workdir / "run" / "results.txt").read_text().splitlines()
        assert lines[0] == "# parkloc results v1"
        assert lines[1].startswith("# config: ")
        echo = json.loads(lines[1][len("# config: "):])
        assert echo["temperature"] == 0.1
        assert echo["threshold"] == 0.2
        assert echo["window"] == 5
        assert echo["target_long_side"] == 320
        assert "jobs" not in echo and "verbose" not in echo

    def test_jobs_do_not_change_output_bytes(self, workdir, tmp_path):
        corpus = workdir / "corpus"
        alt = tmp_path / "run8"
        assert main(["localize", "--queries", str(corpus / "query_manifest.txt"),
                     "--detections", str(corpus / "query_detections.txt"),
                     "--index", str(workdir / "index"), "--out", str(alt),
                     "--target-long-side", "320", "--jobs", "8"]) == 0
        for name in ("results.txt", "counts.csv", "counts_raw.csv"):
            assert (alt / name).read_bytes() == (workdir / "run" / name).read_bytes()

    def test_ablation_mode_writes_both_arms(self, workdir, tmp_path, capsys):
        corpus = workdir / "corpus"
        out = tmp_path / "abl"
        rc = main(["evaluate", "--ablation",
                   "--queries", str(corpus / "query_manifest.txt"),
                   "--detections", str(corpus / "query_detections.txt"),
                   "--index", str(workdir / "index"), "--out", str(out),
                   "--target-long-side", "320"])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "with vehicle remover" in stdout
        table = (out / "ablation.txt").read_text().splitlines()
        assert any(line.startswith("without_vehicle_remover") for line in table)
        assert any(line.startswith("with_vehicle_remover") for line in table)
        assert (out / "with_filter" / "summary.txt").is_file()
        assert (out / "without_filter" / "summary.txt").is_file()


class TestIndexCommand:
    def test_refuses_nonempty_dir_without_force(self, workdir, capsys):
        corpus = workdir / "corpus"
        rc = main(["index", "--manifest", str(corpus / "gallery_manifest.txt"),
                   "--out", str(workdir / "index")])
        assert rc == 1
        assert "--force" in capsys.readouterr().err

    def test_force_overwrites(self, workdir, tmp_path):
        corpus = workdir / "corpus"
        out = tmp_path / "idx"
        out.mkdir()
        (out / "junk.txt").write_text("old")
        rc = main(["index", "--manifest", str(corpus / "gallery_manifest.txt"),
                   "--out", str(out), "--force", "--target-long-side", "320"])
        assert rc == 0
        assert (out / "metadata.json").is_file()


class TestMatchCommand:
    def test_self_match_dumps_one_line_per_coarse_cell(self, tmp_path, capsys):
        png = tmp_path / "golden.png"
        save_grayscale_png(calibration_array(GOLDEN_SEED, GOLDEN_SIDE), png)
        out = tmp_path / "dump.txt"
        rc = main(["match", str(png), str(png), "--out", str(out),
                   "--target-long-side", str(GOLDEN_SIDE)])
        assert rc == 0
        assert "64 matches" in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert lines[0] == "# parkloc matches v1 (xa ya xb yb confidence)"
        assert lines[1].startswith("# config: ")
        data = [ln for ln in lines if not ln.startswith("#")]
        assert len(data) == 64
        for ln in data:
            parts = ln.split()
            assert len(parts) == 5
            [float(p) for p in parts]

    def test_stdout_dump_when_no_out(self, tmp_path, capsys):
        png = tmp_path / "golden.png"
        save_grayscale_png(calibration_array(GOLDEN_SEED, GOLDEN_SIDE), png)
        rc = main(["match", str(png), str(png),
                   "--target-long-side", str(GOLDEN_SIDE)])
        assert rc == 0
        assert "# parkloc matches v1" in capsys.readouterr().out


class TestErrorPaths:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "parkloc" in capsys.readouterr().out

    def test_missing_required_flag(self, capsys):
        assert main(["localize", "--queries", "q.txt", "--out", "o"]) == 2
        capsys.readouterr()

    def test_missing_manifest_reports_error(self, tmp_path, capsys):
        rc = main(["index", "--manifest", str(tmp_path / "nope.txt"),
                   "--out", str(tmp_path / "idx")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_evaluate_needs_results_or_ablation(self, tmp_path, capsys):
        rc = main(["evaluate", "--queries", str(tmp_path / "q.txt"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "--results" in capsys.readouterr().err

    def test_bad_config_value_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"temperature": -1.0}))
        rc = main(["synth", "--out", str(tmp_path / "c"), "--config", str(cfg)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_config_file_feeds_defaults(self, tmp_path):
        png = tmp_path / "img.png"
        save_grayscale_png(calibration_array(GOLDEN_SEED, GOLDEN_SIDE), png)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"threshold": 0.3, "target_long_side": 80}))
        out = tmp_path / "dump.txt"
        assert main(["match", str(png), str(png), "--out", str(out),
                     "--config", str(cfg)]) == 0
        echo_line = out.read_text().splitlines()[1]
        echo = json.loads(echo_line[len("# config: "):])
        assert echo["threshold"] == 0.3
        assert echo["target_long_side"] == 80
