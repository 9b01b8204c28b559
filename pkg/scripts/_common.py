"""Helpers shared by the experiment scripts."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from energy_policy.config import load_config

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "ik2_em_reject.yaml"


def load(path=None, **overrides):
    """Load a YAML config and override training/problem fields by name."""
    cfg = load_config(path or DEFAULT_CONFIG)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            cfg.seed = value
        elif key in {f.name for f in dataclasses.fields(cfg.problem)}:
            setattr(cfg.problem, key, value)
        else:
            setattr(cfg.training, key, value)
    return cfg
