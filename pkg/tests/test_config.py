import dataclasses

import pytest

from otcil.config import (
    CONFIG_VERSION,
    RunConfig,
    Schedule,
    StreamSpec,
    emit_config,
    parse_config,
)


def test_round_trip_defaults():
    config, spec = RunConfig(), StreamSpec()
    parsed_config, parsed_spec = parse_config(emit_config(config, spec))
    assert parsed_config == config
    assert parsed_spec == spec


def test_round_trip_custom():
    config = RunConfig(
        prompt_len=4, beta=0.25, lambda_ortho=0.0, tau=0.5,
        stage1_steps=7, stage1_lr=0.01, stage1_batch=0,
        stage2_steps=3, stage2_lr=0.3, replay_per_class=5,
        optimizer="adam", variant="NO_OT", seeds=(1, 2, 3),
    )
    spec = StreamSpec(num_tasks=3, classes_per_task=2, input_dim=8, feature_dim=4,
                      class_separation=2.0, within_class_scale=0.5,
                      train_per_class=20, eval_per_class=10, diagnostic=True, seed=9)
    parsed_config, parsed_spec = parse_config(emit_config(config, spec))
    assert parsed_config == config
    assert parsed_spec == spec


def test_parse_ignores_comments_and_blanks():
    text = emit_config(RunConfig(), StreamSpec()) + "\n# trailing comment\n\n"
    config, _ = parse_config(text)
    assert config == RunConfig()


def test_parse_rejects_unknown_key():
    text = f"config_version = {CONFIG_VERSION}\nmystery = 1\n"
    with pytest.raises(ValueError, match="unknown key"):
        parse_config(text)


def test_parse_rejects_missing_version():
    with pytest.raises(ValueError, match="missing config_version"):
        parse_config("beta = 0.1\n")


def test_parse_rejects_future_version():
    with pytest.raises(ValueError, match="unsupported config_version"):
        parse_config("config_version = 99\n")


def test_parse_rejects_malformed_line():
    with pytest.raises(ValueError, match="expected 'key = value'"):
        parse_config(f"config_version = {CONFIG_VERSION}\nnonsense\n")


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(steps=-1, lr=0.1)
    with pytest.raises(ValueError):
        Schedule(steps=1, lr=0.1, tau=0.0)
    with pytest.raises(ValueError):
        Schedule(steps=1, lr=0.1, optimizer="lbfgs")


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(prompt_len=0)
    with pytest.raises(ValueError):
        RunConfig(beta=-0.1)
    with pytest.raises(ValueError):
        RunConfig(variant="UNKNOWN")
    with pytest.raises(ValueError):
        RunConfig(seeds=())


def test_stream_spec_validation():
    with pytest.raises(ValueError):
        StreamSpec(num_tasks=0)
    with pytest.raises(ValueError):
        StreamSpec(class_separation=0.0)
    with pytest.raises(ValueError):
        StreamSpec(train_per_class=0)


def test_schedules_inherit_config_fields():
    config = RunConfig(tau=0.2, lambda_ortho=0.3, optimizer="adam")
    s1, s2 = config.stage1_schedule(), config.stage2_schedule()
    assert s1.tau == s2.tau == 0.2
    assert s1.lambda_ortho == 0.0
    assert s2.lambda_ortho == 0.3
    assert s1.optimizer == s2.optimizer == "adam"
    assert s1.batch_size == config.stage1_batch


def test_replace_keeps_validity():
    config = dataclasses.replace(RunConfig(), seeds=(4, 5))
    assert config.seeds == (4, 5)
