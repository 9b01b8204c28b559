"""YAML experiment configuration with strict, line-anchored validation.

Every section maps onto a dataclass; unknown keys and mistyped values are
reported as ``path:line: message``. Missing keys take the documented
defaults below.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .energy import _KTO_WEIGHT_FIELDS, KtoEnergyParams
from .problems import Problem, planar_ik, planar_kto
from .training import STRATEGIES, TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line``."""


@dataclass
class ProblemConfig:
    kind: str = "ik"               # "ik" or "kto"
    n_links: int = 2
    reach: float = 0.3
    link_lengths: list | None = None
    disk_radius: float = 0.25      # ik: training disk around the base
    ref_range: float = math.pi / 2  # kto: |a_ref| bound per joint
    target_half_width: float = 0.2  # kto: target box half-width


@dataclass
class NetworkConfig:
    hidden: list = field(default_factory=lambda: [512, 512])
    encoding: str = "sincos"
    optimizer: str = "plain_gd"
    lr: float = 1e-3
    lr_decay_at: float | None = None
    lr_decay: float = 0.1


@dataclass
class TrainingConfig:
    strategy: str = "em_incremental_reject"
    samples: int = 500
    label_steps: int = 100
    inner_steps: int = 8
    budget: int | None = None
    fit_steps: int | None = None
    target_order: str = "second"
    alpha_a: float = 1.0
    target_line_search: bool = True
    eps: float = 5e-3
    max_samples: int = 500
    expand_k: int = 8
    resample: str = "pds"
    search_radius: float | None = None


@dataclass
class SolverConfig:
    max_iters: int = 100
    tol_grad: float = 1e-9
    tol_step: float = 1e-12
    alpha_max: float = 1.0


@dataclass
class EvalConfig:
    every: int = 50
    test_size: int = 500
    landscape_box: list = field(default_factory=lambda: [-0.3, 0.3, -0.3, 0.3])
    landscape_nx: int = 100
    landscape_ny: int = 100
    warmstart_samples: int = 1000
    conflict_radius: float | None = None  # defaults to twice the PDS spacing


IK_WEIGHTS = {"w_target": 1.0, "w_ref": 1e-8, "w_temp": 1e-3}
KTO_WEIGHTS = {f.name: f.default for f in dataclasses.fields(KtoEnergyParams)
               if f.name in _KTO_WEIGHT_FIELDS}


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    energy: dict = field(default_factory=dict)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def energy_weights(self) -> dict:
        base = dict(IK_WEIGHTS if self.problem.kind == "ik" else KTO_WEIGHTS)
        base.update(self.energy)
        return base

    def build_problem(self) -> Problem:
        pc = self.problem
        lengths = None if pc.link_lengths is None else tuple(pc.link_lengths)
        if pc.kind == "ik":
            return planar_ik(pc.n_links, pc.reach, pc.disk_radius, lengths,
                             **self.energy_weights())
        return planar_kto(pc.n_links, pc.reach, pc.ref_range, pc.target_half_width,
                          lengths, **self.energy_weights())

    def train_config(self) -> TrainConfig:
        t, n = self.training, self.network
        return TrainConfig(
            strategy=t.strategy, samples=t.samples, label_steps=t.label_steps,
            inner_steps=t.inner_steps, budget=t.budget, fit_steps=t.fit_steps,
            optimizer=n.optimizer, lr=n.lr, lr_decay_at=n.lr_decay_at,
            lr_decay=n.lr_decay, target_order=t.target_order, alpha_a=t.alpha_a,
            target_line_search=t.target_line_search, eps=t.eps,
            max_samples=t.max_samples, expand_k=t.expand_k, resample=t.resample,
            search_radius=t.search_radius, eval_every=self.eval.every,
            test_size=self.eval.test_size, seed=self.seed, hidden=tuple(n.hidden),
            encoding=n.encoding)


_SECTIONS = {"problem": ProblemConfig, "network": NetworkConfig,
             "training": TrainingConfig, "solver": SolverConfig, "eval": EvalConfig}

_CHOICES = {
    ("problem", "kind"): ("ik", "kto"),
    ("network", "encoding"): ("sincos", "direct"),
    ("network", "optimizer"): ("plain_gd", "adam"),
    ("training", "strategy"): STRATEGIES,
    ("training", "target_order"): ("first", "second"),
    ("training", "resample"): ("pds", "uniform"),
}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _to_python(node):
    """YAML node -> (value, line) tree; mappings become {key: (value, line)}."""
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"{k.start_mark.line + 1}: duplicate key {key!r}")
            out[key] = _to_python(v)
        return out, line
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v)[0] for v in node.value], line
    return yaml.safe_load(yaml.serialize(node)), line


def _check_type(value, default, annotation: str, where: str):
    optional = "None" in annotation
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: value must not be null")
    if annotation.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if annotation.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if annotation.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if annotation.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if annotation.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    return value


def _build_section(cls, tree, section: str, line: int, source: str):
    if not isinstance(tree, dict):
        raise ConfigError(f"{source}:{line}: section {section!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, (value, kline) in tree.items():
        where = f"{source}:{kline}"
        if key not in fields:
            raise ConfigError(f"{where}: unknown key {key!r} in section {section!r}")
        f = fields[key]
        value = _check_type(value, f.default, str(f.type), f"{where}: {section}.{key}")
        choices = _CHOICES.get((section, key))
        if choices is not None and value not in choices:
            raise ConfigError(f"{where}: {section}.{key} must be one of {list(choices)}")
        kwargs[key] = value
    return cls(**kwargs)


def _anchor(tree, section, default_line, message) -> int:
    """Line of the key a semantic error names, else of the failing section."""
    names = [section] + [n for n in _SECTIONS if n != section]
    for name in names:
        sub, _ = tree.get(name, ({}, default_line))
        for key, (_, kline) in (sub.items() if isinstance(sub, dict) else ()):
            if re.search(rf"\b{re.escape(key)}\b", message):
                return kline
    return tree.get(section, (None, default_line))[1]


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse YAML text into a validated :class:`ExperimentConfig`."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{source}:{line}: malformed YAML ({exc.problem})") from None
    if node is None:
        raise ConfigError(f"{source}:1: empty config")
    try:
        tree, line = _to_python(node)
    except ConfigError as exc:
        raise ConfigError(f"{source}:{exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"{source}:{line}: top level must be a mapping")

    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, (_, kline) in tree.items():
        if key not in top:
            raise ConfigError(f"{source}:{kline}: unknown top-level key {key!r}")
    version, vline = tree.get("schema_version", (None, line))
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{source}:{vline}: schema_version must be {SCHEMA_VERSION}, "
                          f"got {version!r}")

    cfg = ExperimentConfig()
    for name, cls in _SECTIONS.items():
        if name in tree:
            sub, sline = tree[name]
            setattr(cfg, name, _build_section(cls, sub, name, sline, source))
    if "seed" in tree:
        value, sline = tree["seed"]
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigError(f"{source}:{sline}: seed must be a non-negative integer")
        cfg.seed = value
    if "output_dir" in tree:
        value, oline = tree["output_dir"]
        cfg.output_dir = _check_type(value, "", "str", f"{source}:{oline}: output_dir")

    allowed = IK_WEIGHTS if cfg.problem.kind == "ik" else KTO_WEIGHTS
    if "energy" in tree:
        sub, eline = tree["energy"]
        if not isinstance(sub, dict):
            raise ConfigError(f"{source}:{eline}: section 'energy' must be a mapping")
        for key, (value, kline) in sub.items():
            if key not in allowed:
                raise ConfigError(f"{source}:{kline}: unknown energy weight {key!r} for "
                                  f"{cfg.problem.kind!r} problems")
            ann = "int" if key == "horizon" else "float"
            cfg.energy[key] = _check_type(value, None, ann,
                                          f"{source}:{kline}: energy.{key}")

    # semantic checks surface as errors on the section's line
    for name, builder in (("problem", cfg.build_problem), ("training", cfg.train_config)):
        try:
            builder()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{_anchor(tree, name, line, str(exc))}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """YAML text that parses back to ``cfg``."""
    data = {"schema_version": cfg.schema_version, "seed": cfg.seed,
            "output_dir": cfg.output_dir}
    for name in _SECTIONS:
        data[name] = dataclasses.asdict(getattr(cfg, name))
    data["energy"] = dict(cfg.energy)
    return yaml.safe_dump(data, sort_keys=False)
