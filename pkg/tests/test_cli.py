import numpy as np

from otcil.cli import ABLATION_VARIANTS, main
from otcil.config import RunConfig, StreamSpec, emit_config
from otcil.stream import read_feature_file, read_manifest


def toy_config_text(**spec_overrides):
    spec = dict(
        num_tasks=3, classes_per_task=2, input_dim=8, feature_dim=4,
        train_per_class=15, eval_per_class=10, seed=2,
    )
    spec.update(spec_overrides)
    config = RunConfig(
        stage1_steps=5, stage2_steps=10, replay_per_class=8, seeds=(0,)
    )
    return emit_config(config, StreamSpec(**spec))


def write_config(tmp_path, **spec_overrides):
    path = tmp_path / "config.txt"
    path.write_text(toy_config_text(**spec_overrides))
    return path


def test_run_writes_reports(tmp_path, capsys):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    code = main(["run", "--config", str(config), "--out", str(out)])
    assert code == 0
    assert (out / "runs.csv").exists()
    assert (out / "aggregate.csv").exists()
    assert "A_B" in capsys.readouterr().out


def test_run_variant_override(tmp_path, capsys):
    config = write_config(tmp_path)
    code = main([
        "run", "--config", str(config), "--out", str(tmp_path / "o"),
        "--variant", "DMC",
    ])
    assert code == 0
    assert capsys.readouterr().out.startswith("DMC:")


def test_run_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code = main(["run", "--config", str(missing), "--out", str(tmp_path / "o")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_ablate_one_row_per_variant(tmp_path, capsys):
    config = write_config(tmp_path, num_tasks=2, train_per_class=10, eval_per_class=5)
    out = tmp_path / "out"
    code = main(["ablate", "--config", str(config), "--out", str(out)])
    assert code == 0
    stdout_lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(stdout_lines) == len(ABLATION_VARIANTS)
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert len(agg) == 1 + len(ABLATION_VARIANTS)
    assert [line.split(",")[0] for line in agg[1:]] == list(ABLATION_VARIANTS)


def test_gen_then_run_imported_stream(tmp_path, capsys):
    config = write_config(tmp_path, num_tasks=2)
    stream_dir = tmp_path / "stream"
    assert main(["gen", "--config", str(config), "--out", str(stream_dir)]) == 0
    manifest = stream_dir / "manifest.txt"
    assert manifest.exists()
    mapping, train_file, _ = read_manifest(manifest)
    feats, labels = read_feature_file(stream_dir / train_file)
    assert set(np.unique(labels)) <= set(mapping)
    code = main([
        "run", "--config", str(config), "--stream", str(manifest),
        "--out", str(tmp_path / "o2"),
    ])
    assert code == 0
    capsys.readouterr()


def test_run_structured_format(tmp_path):
    config = write_config(tmp_path, num_tasks=2)
    out = tmp_path / "out"
    code = main([
        "run", "--config", str(config), "--out", str(out), "--format", "structured",
    ])
    assert code == 0
    assert (out / "results.json").exists()


def test_unknown_subcommand():
    assert main(["frobnicate"]) != 0


def test_check_subcommand(capsys):
    assert main(["check"]) == 0
    assert "PASS" in capsys.readouterr().out
