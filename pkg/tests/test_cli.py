"""End-to-end command-line runs on small cohorts, plus exit-code contracts."""

import json

import pytest

from trajsurv import autodiff as ad
from trajsurv import crossval as cv
from trajsurv.cli import EXIT_DATA, EXIT_OK, EXIT_TRAINING, EXIT_USAGE, main
from trajsurv.cohort import load_cohort

BASE_DOC = {
    "model": {"d": 8, "d_t": 4, "d_h": 8, "d_c": 4, "T": 3, "K": 4, "message_dim": 8},
    "train": {"lr": 0.01, "batch_size": 16, "max_epochs": 2, "seed": 0},
    "eval": {"bootstrap_b": 100},
    "simulate": {"n": 24, "region_len": 4, "clinical_len": 3},
    "cv": {"k": 3, "repeats": 1},
}


def write_config(tmp_path, name="config.json", cohort=None, **overrides):
    doc = json.loads(json.dumps(BASE_DOC))
    for section, values in overrides.items():
        doc[section] = {**doc.get(section, {}), **values}
    if cohort is not None:
        doc.setdefault("paths", {})["cohort"] = str(cohort)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def simulate_into(tmp_path, sub="sim", **overrides):
    config = write_config(tmp_path, name=f"{sub}-config.json", **overrides)
    out = tmp_path / sub
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    return out / "cohort.json"


class TestSimulate:
    def test_writes_cohort_and_truth(self, tmp_path, capsys):
        cohort = simulate_into(tmp_path)
        assert cohort.exists()
        assert len(load_cohort(cohort)) == 24
        truth = json.load(open(cohort.parent / "truth.json"))
        assert truth["seed"] == 0
        assert len(truth["groups"]) == 24
        assert "wrote 24-patient cohort" in capsys.readouterr().out

    def test_seed_flag_changes_the_draw(self, tmp_path):
        config = write_config(tmp_path)
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        main(["simulate", "--config", str(config), "--out", str(a)])
        main(["simulate", "--config", str(config), "--out", str(b)])
        main(["simulate", "--config", str(config), "--out", str(c), "--seed", "1"])
        same = (a / "cohort.json").read_bytes() == (b / "cohort.json").read_bytes()
        diff = (a / "cohort.json").read_bytes() != (c / "cohort.json").read_bytes()
        assert same and diff


class TestCrossval:
    def test_end_to_end_writes_reports(self, tmp_path, capsys):
        cohort = simulate_into(tmp_path)
        config = write_config(tmp_path, name="cv.json", cohort=cohort)
        out = tmp_path / "cv"
        assert main(["crossval", "--config", str(config),
                     "--out", str(out)]) == EXIT_OK
        for name in ("report.json", "metrics.csv", "curves.csv"):
            assert (out / name).exists()
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "repeat,fold,task,cindex,ibs,auc1,auc3,auc5,mae"
        assert len(lines) == 1 + 3 * 2
        printed = capsys.readouterr().out
        assert "os C-index mean" in printed and "dfs C-index mean" in printed

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        cohort = simulate_into(tmp_path)
        config = write_config(tmp_path, name="cv.json", cohort=cohort)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        main(["crossval", "--config", str(config), "--out", str(out1)])
        main(["crossval", "--config", str(config), "--out", str(out2)])
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
        assert (out1 / "curves.csv").read_bytes() == (out2 / "curves.csv").read_bytes()

    def test_training_failure_threshold_exit_code(self, tmp_path, monkeypatch, capsys):
        cohort = simulate_into(tmp_path)
        config = write_config(tmp_path, name="cv.json", cohort=cohort)

        def exploding(model, train_recs, val_recs, settings, log_path=None):
            raise ad.NonFiniteError("synthetic blow-up")

        monkeypatch.setattr(cv, "train_model", exploding)
        code = main(["crossval", "--config", str(config),
                     "--out", str(tmp_path / "cv")])
        assert code == EXIT_TRAINING
        assert "folds failed to train" in capsys.readouterr().err


class TestTrainEvaluate:
    def test_train_then_evaluate(self, tmp_path, capsys):
        cohort = simulate_into(tmp_path)
        config = write_config(tmp_path, name="fit.json", cohort=cohort)
        fit_out = tmp_path / "fit"
        assert main(["train", "--config", str(config),
                     "--out", str(fit_out)]) == EXIT_OK
        for name in ("model.npz", "training_log.txt", "train_summary.json"):
            assert (fit_out / name).exists()
        summary = json.load(open(fit_out / "train_summary.json"))
        assert summary["epochs_run"] == 2
        assert "best validation loss" in capsys.readouterr().out

        eval_out = tmp_path / "eval"
        assert main(["evaluate", "--config", str(config), "--out", str(eval_out),
                     "--model", str(fit_out / "model.npz")]) == EXIT_OK
        report = json.load(open(eval_out / "report.json"))
        assert report["variant"] == "evaluate"
        assert len(report["folds"]) == 2

    def test_evaluate_without_model_is_usage_error(self, tmp_path, capsys):
        cohort = simulate_into(tmp_path)
        config = write_config(tmp_path, name="e.json", cohort=cohort)
        code = main(["evaluate", "--config", str(config),
                     "--out", str(tmp_path / "e")])
        assert code == EXIT_USAGE
        assert "needs --model or paths.model" in capsys.readouterr().err


class TestAblate:
    def test_variant_recorded_and_check_passes(self, tmp_path):
        cohort = simulate_into(tmp_path)
        config = write_config(tmp_path, name="ab.json", cohort=cohort)
        out = tmp_path / "ablate"
        assert main(["ablate", "--config", str(config), "--out", str(out),
                     "--variant", "no_cascade"]) == EXIT_OK
        report = json.load(open(out / "report.json"))
        assert report["variant"] == "no_cascade"
        assert report["checks"]["os_context_grad_zero"] is True
        assert report["config"]["model"]["cascade"] is False

    def test_unknown_variant_is_usage_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        code = main(["ablate", "--config", str(config), "--variant", "bogus"])
        assert code == EXIT_USAGE
        assert "usage error" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_subcommand(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_missing_required_config_flag(self, capsys):
        assert main(["crossval"]) == EXIT_USAGE

    def test_bad_config_key(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"model": {"x": 1}}')
        assert main(["crossval", "--config", str(path)]) == EXIT_USAGE
        assert "unknown key model.x" in capsys.readouterr().err

    def test_config_not_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["crossval", "--config", str(path)]) == EXIT_USAGE

    def test_missing_cohort_file_is_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path, cohort=tmp_path / "nowhere.json")
        code = main(["crossval", "--config", str(config),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA
        assert "data error" in capsys.readouterr().err

    def test_corrupt_cohort_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "cohort.json"
        bad.write_text('{"schema_version": 1}')
        config = write_config(tmp_path, cohort=bad)
        code = main(["crossval", "--config", str(config),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "max relative gradient error" in out
    assert "passed" in out


def test_console_script_installed():
    import shutil
    import subprocess

    exe = shutil.which("trajsurv")
    assert exe is not None
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "crossval" in proc.stdout
