"""Test metrics and the benchmark experiment grid.

A grid cell is one (method, training-period L, seed). Per (L, seed) the
runner generates one training set and one test set, trains every
requested method on the shared training set, and scores each on the
shared test set; the relative log-loss divides by that same cell
group's oracle. Aggregates are mean and sample standard deviation over
seeds per (method, L).
"""

from __future__ import annotations

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DelayCvrError,
    InvalidInputError,
    MissingGroundTruthError,
)
from .fileio import atomic_write_text
from .models import predict_cvr
from .synthgen import SynthConfig, SyntheticDataset, generate, generate_test_set
from .trainers import TrainConfig, train_dfm, train_dla, train_naive, train_oracle

METHODS = ("oracle", "naive", "dfm", "dla", "nn-dla")

CELLS_HEADER = "method,L,seed,test_log_loss,relative_log_loss,mean_propensity,converged"
AGGREGATES_HEADER = "method,L,mean_rel_ll,std_rel_ll,n_seeds"


def log_loss(preds, y_true) -> float:
    """Mean binary cross entropy with predictions clamped to [1e-12, 1-1e-12]."""
    p = np.atleast_1d(np.asarray(preds, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y_true, dtype=np.float64))
    if p.shape[0] == 0:
        raise InvalidInputError("log_loss needs at least one sample")
    if p.shape != y.shape:
        raise InvalidInputError("preds and labels must have equal length")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0/1")
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def relative_log_loss(method_ll: float, oracle_ll: float) -> float:
    """Method log-loss divided by the same cell's oracle log-loss."""
    if not oracle_ll > 0:
        raise InvalidInputError("oracle log-loss must be positive")
    return method_ll / oracle_ll


def mean_propensity(dataset: SyntheticDataset) -> float:
    """Arithmetic mean of the stored true propensities."""
    if dataset.theta_true is None:
        raise MissingGroundTruthError("dataset has no stored propensities")
    return float(np.mean(dataset.theta_true))


def sample_std(values) -> float:
    """Sample standard deviation (divisor n-1); 0.0 for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] < 2:
        return 0.0
    return float(np.std(v, ddof=1))


@dataclass(frozen=True)
class CellResult:
    method: str
    L: float
    seed: int
    test_log_loss: float
    relative_log_loss: float
    mean_propensity: float
    converged: bool
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class AggregateRow:
    method: str
    L: float
    mean_rel_ll: float
    std_rel_ll: float
    n_seeds: int


@dataclass(frozen=True)
class ExperimentGrid:
    """Everything run_experiment needs; results are a pure function of it."""

    lengths: tuple
    seeds: tuple
    methods: tuple
    synth_template: SynthConfig
    train_configs: dict = field(default_factory=dict)
    test_n: int | None = None

    def validate(self) -> None:
        if not self.lengths or not self.seeds or not self.methods:
            raise ConfigError("experiment grid needs lengths, seeds and methods")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if "oracle" not in self.methods:
            raise ConfigError("the oracle method is required for relative log-loss")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate method in grid")
        self.synth_template.validate()
        for cfg in self.train_configs.values():
            cfg.validate()

    def train_config_for(self, method: str, seed: int) -> TrainConfig:
        cfg = self.train_configs.get(method, self.train_configs.get("default", TrainConfig()))
        cfg = replace(cfg, seed=seed)
        if method == "dla":
            cfg = replace(cfg, loss_variant="ips")
        elif method == "nn-dla":
            cfg = replace(cfg, loss_variant="nonneg")
        return cfg


def expand_cells(grid: ExperimentGrid) -> list[tuple[str, float, int]]:
    """Canonical (method, L, seed) enumeration of the grid."""
    return [(m, L, s) for m in grid.methods for L in grid.lengths for s in grid.seeds]


def _fit_and_predict(method: str, train_ds: SyntheticDataset, cfg: TrainConfig,
                     x_test: np.ndarray):
    if method == "oracle":
        model, report = train_oracle(train_ds, cfg)
        return predict_cvr(model, x_test), report
    if method == "naive":
        model, report = train_naive(train_ds, cfg)
        return predict_cvr(model, x_test), report
    if method == "dfm":
        model, report = train_dfm(train_ds, cfg)
        return model.predict_cvr(x_test), report
    if method in ("dla", "nn-dla"):
        f, _, report = train_dla(train_ds, cfg)
        return predict_cvr(f, x_test), report
    raise ConfigError(f"unknown method {method!r}")


def run_cell_group(grid: ExperimentGrid, L: float, seed: int) -> list[CellResult]:
    """Train and score every grid method for one (L, seed) pair."""
    synth = replace(grid.synth_template, training_period_days=L, seed=seed)
    train_ds = generate(synth)
    test_ds = generate_test_set(synth, train_ds.coefficients, n=grid.test_n)
    prop = mean_propensity(train_ds)

    oracle_cfg = grid.train_config_for("oracle", seed)
    oracle_model, oracle_report = train_oracle(train_ds, oracle_cfg)
    oracle_ll = log_loss(predict_cvr(oracle_model, test_ds.x), test_ds.y_true)

    results = []
    for method in grid.methods:
        if method == "oracle":
            results.append(CellResult(
                method="oracle", L=L, seed=seed, test_log_loss=oracle_ll,
                relative_log_loss=relative_log_loss(oracle_ll, oracle_ll),
                mean_propensity=prop, converged=oracle_report.converged,
            ))
            continue
        cfg = grid.train_config_for(method, seed)
        try:
            preds, report = _fit_and_predict(method, train_ds, cfg, test_ds.x)
            ll = log_loss(preds, test_ds.y_true)
            results.append(CellResult(
                method=method, L=L, seed=seed, test_log_loss=ll,
                relative_log_loss=relative_log_loss(ll, oracle_ll),
                mean_propensity=prop, converged=report.converged,
            ))
        except DelayCvrError as exc:
            results.append(CellResult(
                method=method, L=L, seed=seed, test_log_loss=math.nan,
                relative_log_loss=math.nan, mean_propensity=prop,
                converged=False, failed=True, error=str(exc),
            ))
    return results


def _cell_group_task(payload):
    grid, L, seed = payload
    return run_cell_group(grid, L, seed)


@dataclass(frozen=True)
class ResultsTable:
    cells: tuple
    aggregates: tuple

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells if c.failed)

    def cells_csv(self) -> str:
        lines = [CELLS_HEADER]
        for c in self.cells:
            lines.append(
                f"{c.method},{_fmt(c.L)},{c.seed},{_fmt(c.test_log_loss)},"
                f"{_fmt(c.relative_log_loss)},{_fmt(c.mean_propensity)},"
                f"{str(c.converged).lower()}"
            )
        return "\n".join(lines) + "\n"

    def aggregates_csv(self) -> str:
        lines = [AGGREGATES_HEADER]
        for a in self.aggregates:
            lines.append(
                f"{a.method},{_fmt(a.L)},{_fmt(a.mean_rel_ll)},"
                f"{_fmt(a.std_rel_ll)},{a.n_seeds}"
            )
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[str, str]:
        import os

        os.makedirs(out_dir, exist_ok=True)
        cells_path = os.path.join(out_dir, "cells.csv")
        agg_path = os.path.join(out_dir, "aggregates.csv")
        atomic_write_text(cells_path, self.cells_csv())
        atomic_write_text(agg_path, self.aggregates_csv())
        return cells_path, agg_path


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _aggregate(grid: ExperimentGrid, cells: list[CellResult]) -> list[AggregateRow]:
    rows = []
    for method in grid.methods:
        for L in grid.lengths:
            rels = [c.relative_log_loss for c in cells
                    if c.method == method and c.L == L and not c.failed]
            rows.append(AggregateRow(
                method=method, L=L,
                mean_rel_ll=float(np.mean(rels)) if rels else math.nan,
                std_rel_ll=sample_std(rels) if rels else math.nan,
                n_seeds=len(rels),
            ))
    return rows


def run_experiment(grid: ExperimentGrid, jobs: int = 1, log=None) -> ResultsTable:
    """Run the full grid; cells whose training diverges are marked failed
    and excluded from aggregates, the rest of the run continues."""
    grid.validate()
    pairs = [(L, seed) for L in grid.lengths for seed in grid.seeds]
    groups: dict[tuple, list[CellResult]] = {}
    if jobs <= 1:
        for L, seed in pairs:
            groups[(L, seed)] = run_cell_group(grid, L, seed)
            _log_group(log, groups[(L, seed)])
    else:
        payloads = [(grid, L, seed) for L, seed in pairs]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for (L, seed), results in zip(pairs, pool.map(_cell_group_task, payloads)):
                groups[(L, seed)] = results
                _log_group(log, results)

    method_rank = {m: i for i, m in enumerate(grid.methods)}
    cells = sorted(
        (c for results in groups.values() for c in results),
        key=lambda c: (method_rank[c.method], c.L, c.seed),
    )
    for c in cells:
        if c.failed:
            print(f"warning: cell failed method={c.method} L={_fmt(c.L)} "
                  f"seed={c.seed} error={c.error}", file=sys.stderr)
    return ResultsTable(cells=tuple(cells), aggregates=tuple(_aggregate(grid, cells)))


def _log_group(log, results: list[CellResult]) -> None:
    if log is None:
        return
    for c in results:
        log(f"event=cell_done method={c.method} L={_fmt(c.L)} seed={c.seed} "
            f"rel_ll={_fmt(c.relative_log_loss)} failed={str(c.failed).lower()}")
