"""Run configuration files.

One JSON document with up to three sections:

  synth        generator knobs (SynthConfig fields)
  train        per-method trainer overrides; "default" applies to all
  experiment   grid definition: lengths, seeds, methods, out_dir, test_n

Parsing is strict: unknown keys anywhere are rejected so a typo in a
hyperparameter sweep fails loudly instead of silently using a default.
Missing keys fall back to the documented defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .evaluate import METHODS, ExperimentGrid
from .synthgen import SynthConfig
from .trainers import TrainConfig

DEFAULT_LENGTHS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_N_SEEDS = 10
DEFAULT_METHODS = ("oracle", "naive", "dfm", "nn-dla")

_SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_EXPERIMENT_KEYS = {"lengths", "seeds", "methods", "out_dir", "test_n"}


def _check_keys(section, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} section must be a JSON object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(cls, section: dict, where: str):
    try:
        obj = cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc
    return obj


@dataclass(frozen=True)
class ExperimentSection:
    lengths: tuple = DEFAULT_LENGTHS
    seeds: tuple = tuple(range(1, DEFAULT_N_SEEDS + 1))
    methods: tuple = DEFAULT_METHODS
    out_dir: str | None = None
    test_n: int | None = None


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: dict = field(default_factory=dict)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def train_config(self, method: str) -> TrainConfig:
        cfg = self.train.get(method, self.train.get("default", TrainConfig()))
        if method == "dla":
            cfg = dataclasses.replace(cfg, loss_variant="ips")
        elif method == "nn-dla":
            cfg = dataclasses.replace(cfg, loss_variant="nonneg")
        return cfg

    def experiment_grid(self) -> ExperimentGrid:
        grid = ExperimentGrid(
            lengths=tuple(self.experiment.lengths),
            seeds=tuple(self.experiment.seeds),
            methods=tuple(self.experiment.methods),
            synth_template=self.synth,
            train_configs=dict(self.train),
            test_n=self.experiment.test_n,
        )
        grid.validate()
        return grid


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, {"synth", "train", "experiment"}, "config")

    synth_doc = doc.get("synth", {})
    _check_keys(synth_doc, _SYNTH_KEYS, "synth")
    synth = _build(SynthConfig, synth_doc, "synth")
    synth.validate()

    train_doc = doc.get("train", {})
    allowed_methods = set(METHODS) | {"default"}
    _check_keys(train_doc, allowed_methods, "train")
    default_doc = dict(train_doc.get("default", {}))
    _check_keys(default_doc, _TRAIN_KEYS, "train.default")
    train = {}
    if default_doc:
        train["default"] = _build(TrainConfig, default_doc, "train.default")
        train["default"].validate()
    for method in METHODS:
        if method in train_doc:
            merged = dict(default_doc)
            _check_keys(train_doc[method], _TRAIN_KEYS, f"train.{method}")
            merged.update(train_doc[method])
            train[method] = _build(TrainConfig, merged, f"train.{method}")
            train[method].validate()

    exp_doc = dict(doc.get("experiment", {}))
    _check_keys(exp_doc, _EXPERIMENT_KEYS, "experiment")
    seeds = exp_doc.get("seeds", DEFAULT_N_SEEDS)
    if isinstance(seeds, int):
        if seeds < 1:
            raise ConfigError("experiment.seeds count must be >= 1")
        seeds = tuple(range(1, seeds + 1))
    elif isinstance(seeds, (list, tuple)):
        seeds = tuple(int(s) for s in seeds)
    else:
        raise ConfigError("experiment.seeds must be a count or a list of seeds")
    lengths = exp_doc.get("lengths", DEFAULT_LENGTHS)
    if not isinstance(lengths, (list, tuple)) or not lengths:
        raise ConfigError("experiment.lengths must be a nonempty list")
    methods = tuple(exp_doc.get("methods", DEFAULT_METHODS))
    experiment = ExperimentSection(
        lengths=tuple(float(L) for L in lengths),
        seeds=seeds,
        methods=methods,
        out_dir=exp_doc.get("out_dir"),
        test_n=exp_doc.get("test_n"),
    )
    return RunConfig(synth=synth, train=train, experiment=experiment)


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_run_config(doc)
