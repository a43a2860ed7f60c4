import json

import pytest

from posetrack import __version__
from posetrack.cli import build_parser, main
from posetrack.losses import GRADIENT_FAMILIES
from posetrack.track import SCENARIOS


@pytest.fixture
def dataset_dir(tmp_path):
    """A four-sample dataset generated through the CLI."""
    out = tmp_path / "data"
    assert main(["--seed", "3", "--out", str(out), "gen", "--n", "4"]) == 0
    return out


def test_help_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    assert "gradcheck" in capsys.readouterr().out


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_subcommand_is_required():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2


def test_zero_trials_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["gradcheck", "--trials", "0"])
    assert excinfo.value.code == 2


def test_parser_defaults():
    args = build_parser().parse_args(["track"])
    assert args.scenario == "all"
    assert args.estimator == "oracle"
    assert args.reset == 15
    assert args.reflective == "off"
    assert args.format == "json"


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--trials", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == list(GRADIENT_FAMILIES)
    assert all("max_rel_error=" in line for line in lines)


def test_gen_writes_manifest(capsys, dataset_dir):
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    assert manifest["samples"] == 4
    assert manifest["master_seed"] == 3
    assert (dataset_dir / "rgb_3.ppm").exists()
    assert (dataset_dir / "pred_depth_0.pgm").exists()
    assert capsys.readouterr().out.strip().endswith("manifest.json")


def test_gen_with_config_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_viewpoints": 4, "p_occluder": 0.0}))
    out = tmp_path / "data"
    assert main(["--out", str(out), "gen", "--n", "1", "--config", str(cfg)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["n_viewpoints"] == 4
    assert manifest["config"]["p_occluder"] == 0.0


def test_gen_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"viewpoints": 4}))
    assert main(["--out", str(tmp_path), "gen", "--n", "1", "--config", str(cfg)]) == 2
    assert "viewpoints" in capsys.readouterr().err


def test_gen_missing_mesh(tmp_path):
    assert main(["--out", str(tmp_path), "gen", "--n", "1", "--mesh", str(tmp_path / "absent.obj")]) == 2


def test_fit_writes_checkpoint_and_history(dataset_dir, tmp_path):
    out = tmp_path / "run"
    argv = ["--out", str(out), "fit", "--data", str(dataset_dir), "--epochs", "2", "--warmup", "1", "--b2", "4"]
    assert main(argv) == 0
    checkpoint = json.loads((out / "checkpoint.json").read_text())
    assert checkpoint["epoch"] == 2
    assert len(checkpoint["bank"]["params"]) == 12
    assert checkpoint["scorer"] is not None
    assert len((out / "history.csv").read_text().splitlines()) == 3


def test_fit_without_symmetry(dataset_dir, tmp_path):
    out = tmp_path / "run"
    argv = ["--out", str(out), "fit", "--data", str(dataset_dir), "--epochs", "1", "--warmup", "0", "--symmetry-axis", "none"]
    assert main(argv) == 0
    checkpoint = json.loads((out / "checkpoint.json").read_text())
    assert checkpoint["bank"] is None


def test_fit_missing_dataset(tmp_path):
    assert main(["--out", str(tmp_path), "fit", "--data", str(tmp_path / "nothing")]) == 2


def test_track_single_scenario(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "track", "--scenario", "translation_only", "--frames", "30"]) == 0
    report = json.loads((tmp_path / "track_translation_only.json").read_text())
    assert len(report["frames"]) == 30
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[0] == "scenario"
    assert out[1].startswith("translation_only")


def test_track_csv_format(tmp_path):
    argv = ["--out", str(tmp_path), "--format", "csv", "track", "--scenario", "rotation_only", "--frames", "20"]
    assert main(argv) == 0
    assert (tmp_path / "track_rotation_only.csv").read_text().startswith("frame,trans_err_mm")


def test_track_all_scenarios_concurrently(tmp_path):
    assert main(["--out", str(tmp_path), "track", "--frames", "20", "--workers", "3"]) == 0
    for name in SCENARIOS:
        assert (tmp_path / f"track_{name}.json").exists()


def test_track_failure_budget(tmp_path, capsys):
    argv = ["--out", str(tmp_path), "track", "--scenario", "translation_only", "--frames", "30",
            "--estimator", "bias", "--fail-budget", "0"]  # fmt: skip
    assert main(argv) == 1
    assert "translation_only" in capsys.readouterr().err


def test_track_flip_scenario_with_filter(tmp_path):
    argv = ["--out", str(tmp_path), "track", "--scenario", "flip_injection", "--reflective", "on", "--fail-budget", "0"]
    assert main(argv) == 0
    report = json.loads((tmp_path / "track_flip_injection.json").read_text())
    assert report["repasses"] == 3
    assert report["metadata"]["policy"]["reflective"]["max_repasses"] == 1


def test_track_flip_scenario_without_filter(tmp_path):
    argv = ["--out", str(tmp_path), "track", "--scenario", "flip_injection", "--fail-budget", "0"]
    assert main(argv) == 1


def test_track_model_requires_checkpoint(tmp_path):
    assert main(["--out", str(tmp_path), "track", "--estimator", "model"]) == 2
    assert main(["--out", str(tmp_path), "track", "--model", str(tmp_path / "c.json")]) == 2


def test_track_with_trained_model(dataset_dir, tmp_path):
    run = tmp_path / "run"
    assert main(["--out", str(run), "fit", "--data", str(dataset_dir), "--epochs", "1", "--warmup", "1"]) == 0
    argv = ["--out", str(run), "track", "--scenario", "translation_only", "--frames", "5",
            "--estimator", "model", "--model", str(run / "checkpoint.json")]  # fmt: skip
    assert main(argv) == 0
    report = json.loads((run / "track_translation_only.json").read_text())
    assert report["estimator"] == "model"


def test_fit_is_deterministic(dataset_dir, tmp_path):
    for name in ("a", "b"):
        argv = ["--seed", "1", "--out", str(tmp_path / name), "fit", "--data", str(dataset_dir),
                "--epochs", "2", "--warmup", "1", "--b2", "4"]  # fmt: skip
        assert main(argv) == 0
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_fit_warmup_only_history(dataset_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["--out", str(out), "fit", "--data", str(dataset_dir), "--epochs", "1", "--warmup", "1"]) == 0
    checkpoint = json.loads((out / "checkpoint.json").read_text())
    assert checkpoint["bank"]["axis_mask"] == [False, False, True]
    assert len(checkpoint["bank"]["params"]) == 64 * 3
    assert len((out / "history.csv").read_text().splitlines()) == 2


def test_gen_is_byte_identical_across_workers(tmp_path):
    for name, workers in (("a", "1"), ("b", "3")):
        assert main(["--seed", "7", "--out", str(tmp_path / name), "gen", "--n", "3", "--workers", workers]) == 0
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_global_flags_after_subcommand(tmp_path):
    out = tmp_path / "data"
    assert main(["gen", "--n", "1", "--seed", "7", "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 7


def test_global_flags_before_subcommand_survive(tmp_path):
    out = tmp_path / "data"
    assert main(["--seed", "5", "--out", str(out), "gen", "--n", "1"]) == 0
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 5


def test_subcommand_flag_overrides_global_flag(tmp_path):
    out = tmp_path / "data"
    argv = ["--seed", "5", "--out", str(tmp_path / "unused"), "gen", "--n", "1", "--seed", "9", "--out", str(out)]
    assert main(argv) == 0
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 9
    assert not (tmp_path / "unused").exists()


def test_non_numeric_fail_budget_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["track", "--fail-budget", "many"])
    assert excinfo.value.code == 2
    assert "is not an integer" in capsys.readouterr().err


def test_fit_with_single_entry_bank(dataset_dir, tmp_path):
    out = tmp_path / "run"
    argv = ["--out", str(out), "fit", "--data", str(dataset_dir), "--epochs", "2", "--warmup", "1", "--b2", "1"]
    assert main(argv) == 0
    checkpoint = json.loads((out / "checkpoint.json").read_text())
    assert len(checkpoint["bank"]["params"]) == 3
