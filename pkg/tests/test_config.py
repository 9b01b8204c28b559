import dataclasses

import pytest

from energy_policy.config import (IK_WEIGHTS, KTO_WEIGHTS, ConfigError, ExperimentConfig,
                                  TrainingConfig, dump_config, load_config, parse_config)
from energy_policy.energy import IkEnergy
from energy_policy.training import TrainConfig

HEAD = "schema_version: 1\n"


def error_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "run.yaml")
    return str(info.value)


def test_minimal_config_takes_documented_defaults():
    cfg = parse_config(HEAD)
    assert cfg == ExperimentConfig()
    p = cfg.build_problem()
    assert p.input_dim == 2 and p.action_dim == 2
    assert cfg.energy_weights() == IK_WEIGHTS


def test_training_defaults_match_the_trainer():
    ours = {f.name: f.default for f in dataclasses.fields(TrainingConfig)}
    theirs = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    for name, value in ours.items():
        assert theirs[name] == value, name
    net = ExperimentConfig().network
    assert (net.optimizer, net.lr, net.encoding) == (theirs["optimizer"], theirs["lr"],
                                                      theirs["encoding"])
    assert tuple(net.hidden) == theirs["hidden"]
    assert ours["strategy"] == "em_incremental_reject"


def test_ik_weight_defaults_match_the_energy():
    e = IkEnergy(ExperimentConfig().build_problem().chain)
    assert (e.w_target, e.w_ref, e.w_temp) == (IK_WEIGHTS["w_target"], IK_WEIGHTS["w_ref"],
                                               IK_WEIGHTS["w_temp"])


def test_full_config_round_trip():
    text = HEAD + """seed: 7
output_dir: runs/x
problem:
  kind: kto
  n_links: 3
energy:
  horizon: 6
  w_vel: 0.5
network:
  hidden: [32, 32]
  optimizer: adam
  lr_decay_at: 0.7
training:
  strategy: dagger
  samples: 40
  budget: 400
eval:
  landscape_nx: 2
  landscape_ny: 2
"""
    cfg = parse_config(text)
    assert cfg.seed == 7 and cfg.problem.n_links == 3 and cfg.training.budget == 400
    assert cfg.energy_weights()["w_vel"] == 0.5
    assert cfg.energy_weights()["w_acc"] == KTO_WEIGHTS["w_acc"]
    assert cfg.build_problem().action_dim == 18
    tc = cfg.train_config()
    assert tc.strategy == "dagger" and tc.budget_cap == 400 and tc.hidden == (32, 32)
    assert parse_config(dump_config(cfg)) == cfg


def test_load_config_from_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(HEAD + "seed: 3\n")
    assert load_config(path).seed == 3
    path.write_text(HEAD + "seed: -3\n")
    with pytest.raises(ConfigError, match=r"c\.yaml:2: seed"):
        load_config(path)


@pytest.mark.parametrize("text, expected", [
    ("", "run.yaml:1: empty config"),
    ("seed: 1\n", "run.yaml:1: schema_version must be 1"),
    ("schema_version: 2\n", "run.yaml:1: schema_version must be 1"),
    (HEAD + "colour: red\n", "run.yaml:2: unknown top-level key 'colour'"),
    (HEAD + "training:\n  sampels: 3\n", "run.yaml:3: unknown key 'sampels'"),
    (HEAD + "network:\n  lr: fast\n", "run.yaml:3: network.lr: expected a number"),
    (HEAD + "training:\n  samples: 2.5\n", "run.yaml:3: training.samples: expected an integer"),
    (HEAD + "training:\n  target_line_search: 1\n", "run.yaml:3: training.target_line_search: expected a boolean"),
    (HEAD + "seed: 1\nseed: 2\n", "run.yaml:3: duplicate key 'seed'"),
    (HEAD + "problem: [1, 2\n", "run.yaml:3: malformed YAML"),
    (HEAD + "problem: 3\n", "run.yaml:2: section 'problem' must be a mapping"),
    (HEAD + "energy:\n  w_vel: 1.0\n", "run.yaml:3: unknown energy weight 'w_vel'"),
    (HEAD + "network:\n  encoding: polar\n", "run.yaml:3: network.encoding must be one of"),
    (HEAD + "training:\n  strategy: bc\n  samples: 0\n", "run.yaml:4: samples must be >= 1"),
    (HEAD + "training:\n  budget: -5\n", "run.yaml:3: budget cap must be positive"),
    (HEAD + "network:\n  lr: -1.0\n", "run.yaml:3: lr must be positive"),
    (HEAD + "problem:\n  n_links: 0\n", "run.yaml:3: n_links must be >= 1"),
    (HEAD + "problem:\n  kind: kto\nenergy:\n  horizon: 0\n", "run.yaml:"),
])
def test_errors_are_line_anchored(text, expected):
    assert error_of(text).startswith(expected)
