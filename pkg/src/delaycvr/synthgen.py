"""Synthetic delayed-feedback data generation.

One dataset simulates N click events over a training period of L days.
Per event: features X ~ N(0, sigma_x^2 I), a click timestamp uniform in
[0, L], a conversion delay D drawn from the configured family with
per-event mean exp(w_expo . x), the elapsed time E = L - ts_click, the
eventual conversion Y ~ Bernoulli(sigmoid(w_cvr . x)), and the observed
label Y_obs = O * Y where O indicates the conversion arrived in time.

Ground-truth gamma (CVR) and theta (propensity, the delay CDF at the
elapsed time) are stored per sample for diagnostics; real logs would not
carry them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import ndtr

from . import rng as rng_streams
from .errors import ConfigError, InvalidInputError
from .fileio import atomic_write_text
from .losses import LabeledBatch
from .models import clamped_sigmoid

DELAY_FAMILIES = ("exponential", "normal")
OBSERVATION_RULES = ("elapsed", "literal")

# Stored probabilities are nudged into the open interval by one ulp so
# 1/theta and 1/gamma stay finite even for extreme draws.
_OPEN_LO = float(np.nextafter(0.0, 1.0))
_OPEN_HI = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class SynthConfig:
    """All generator knobs; a dataset is a pure function of this config."""

    n: int = 100_000
    p: int = 30
    sigma_x: float = 0.5
    sigma_w: float = 1.0
    training_period_days: float = 1.0
    delay_family: str = "exponential"
    normal_delay_std: float = 1.0
    observation_rule: str = "elapsed"
    seed: int = 1

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.p < 1:
            raise ConfigError("p must be >= 1")
        if not self.training_period_days > 0:
            raise ConfigError("training_period_days must be > 0")
        if self.sigma_x < 0 or self.sigma_w < 0:
            raise ConfigError("sigma_x and sigma_w must be nonnegative")
        if self.normal_delay_std <= 0:
            raise ConfigError("normal_delay_std must be > 0")
        if self.delay_family not in DELAY_FAMILIES:
            raise ConfigError(f"delay_family must be one of {DELAY_FAMILIES}")
        if self.observation_rule not in OBSERVATION_RULES:
            raise ConfigError(f"observation_rule must be one of {OBSERVATION_RULES}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class Coefficients:
    """True generator coefficients: CVR logits and log mean delay."""

    w_cvr: np.ndarray
    w_expo: np.ndarray


@dataclass(frozen=True)
class SyntheticSample:
    """One click event with its ground truth (None where unavailable)."""

    x: np.ndarray
    ts_click: float | None
    d: float | None
    e: float | None
    gamma_true: float
    theta_true: float | None
    y_true: int
    o_true: int | None
    y_obs: int | None


@dataclass
class SyntheticDataset:
    """Columnar dataset; test sets carry None for the delay-side columns."""

    config: SynthConfig
    coefficients: Coefficients
    x: np.ndarray
    gamma_true: np.ndarray
    y_true: np.ndarray
    ts_click: np.ndarray | None = None
    d: np.ndarray | None = None
    e: np.ndarray | None = None
    theta_true: np.ndarray | None = None
    o_true: np.ndarray | None = None
    y_obs: np.ndarray | None = None
    role: str = "train"

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def sample(self, i: int) -> SyntheticSample:
        def col(arr):
            return None if arr is None else arr[i]

        return SyntheticSample(
            x=self.x[i],
            ts_click=col(self.ts_click),
            d=col(self.d),
            e=col(self.e),
            gamma_true=float(self.gamma_true[i]),
            theta_true=None if self.theta_true is None else float(self.theta_true[i]),
            y_true=int(self.y_true[i]),
            o_true=None if self.o_true is None else int(self.o_true[i]),
            y_obs=None if self.y_obs is None else int(self.y_obs[i]),
        )

    def labeled_batch(self) -> LabeledBatch:
        if self.y_obs is None:
            raise InvalidInputError("dataset has no observed labels (test set)")
        return LabeledBatch(
            features=self.x,
            elapsed=self.e,
            y_obs=self.y_obs,
            y_true=self.y_true,
            o_true=self.o_true,
            delay=self.d,
        )


def sample_coefficients(p: int, sigma_w: float, rng: np.random.Generator) -> Coefficients:
    """Two independent Gaussian coefficient vectors, mean 0, std sigma_w."""
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    w_cvr = rng.normal(0.0, sigma_w, size=p)
    w_expo = rng.normal(0.0, sigma_w, size=p)
    return Coefficients(w_cvr=w_cvr, w_expo=w_expo)


def true_cvr(x, w_cvr):
    """sigmoid(w_cvr . x), no intercept, clamped strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w_cvr, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise InvalidInputError("feature dimension does not match w_cvr")
    return clamped_sigmoid(x @ w)


def _mean_delay(x, w_expo) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w_expo, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise InvalidInputError("feature dimension does not match w_expo")
    return np.exp(x @ w)


def sample_delay(x, w_expo, family: str, normal_std: float, rng: np.random.Generator):
    """Per-event conversion delays in days.

    exponential: mean exp(w_expo . x) (the scale, so larger logits mean
    longer delays). normal: the same mean with std normal_std, truncated
    to [0, inf) by rejection.
    """
    mu = np.atleast_1d(_mean_delay(x, w_expo))
    if family == "exponential":
        d = rng.exponential(scale=mu)
    elif family == "normal":
        d = rng.normal(mu, normal_std)
        bad = d < 0.0
        while bad.any():
            d[bad] = rng.normal(mu[bad], normal_std)
            bad = d < 0.0
    else:
        raise InvalidInputError(f"unknown delay family: {family!r}")
    return float(d[0]) if np.ndim(x) == 1 else d


def true_propensity(x, e, coefficients: Coefficients, family: str, normal_std: float = 1.0):
    """P(D <= e | x): the delay-family CDF at the elapsed time.

    exponential: 1 - exp(-e / mu(x)); normal truncated at zero:
    (Phi((e-mu)/s) - Phi(-mu/s)) / (1 - Phi(-mu/s)).
    """
    e_arr = np.atleast_1d(np.asarray(e, dtype=np.float64))
    if np.any(e_arr < 0):
        raise InvalidInputError("elapsed time must be nonnegative")
    mu = np.atleast_1d(_mean_delay(x, coefficients.w_expo))
    if family == "exponential":
        theta = -np.expm1(-e_arr / mu)
    elif family == "normal":
        below_zero = ndtr(-mu / normal_std)
        theta = (ndtr((e_arr - mu) / normal_std) - below_zero) / (1.0 - below_zero)
    else:
        raise InvalidInputError(f"unknown delay family: {family!r}")
    if np.ndim(x) == 1 and np.ndim(e) == 0:
        return float(theta[0])
    return theta


def generate(config: SynthConfig) -> SyntheticDataset:
    """Run the full generation process for one training dataset.

    Streams: coefficients come from (seed, "coefficients"), samples from
    (seed, "samples") with a fixed draw order (features, click times,
    delays, conversion uniforms), so a seed pins the dataset bitwise.
    """
    config.validate()
    coeffs = sample_coefficients(
        config.p, config.sigma_w, rng_streams.stream(config.seed, "coefficients")
    )
    rng = rng_streams.stream(config.seed, "samples")
    L = config.training_period_days

    x = rng.normal(0.0, config.sigma_x, size=(config.n, config.p))
    gamma = np.clip(true_cvr(x, coeffs.w_cvr), _OPEN_LO, _OPEN_HI)
    ts_click = rng.uniform(0.0, L, size=config.n)
    d = sample_delay(x, coeffs.w_expo, config.delay_family, config.normal_delay_std, rng)
    e = L - ts_click
    if config.observation_rule == "elapsed":
        o = (d <= e).astype(np.int64)
        theta = true_propensity(x, e, coeffs, config.delay_family, config.normal_delay_std)
    else:
        o = (d <= L).astype(np.int64)
        theta = true_propensity(
            x, np.full(config.n, L), coeffs, config.delay_family, config.normal_delay_std
        )
    theta = np.clip(theta, _OPEN_LO, _OPEN_HI)
    y = (rng.random(config.n) < gamma).astype(np.int64)
    y_obs = o * y

    return SyntheticDataset(
        config=config,
        coefficients=coeffs,
        x=x,
        gamma_true=gamma,
        y_true=y,
        ts_click=ts_click,
        d=d,
        e=e,
        theta_true=theta,
        o_true=o,
        y_obs=y_obs,
        role="train",
    )


def generate_test_set(
    config: SynthConfig, coefficients: Coefficients, n: int | None = None
) -> SyntheticDataset:
    """Fresh features and true labels under the training coefficients.

    Elapsed times do not exist for test data, so every delay-side column
    is absent; evaluation can only touch x and y_true.
    """
    config.validate()
    n = config.n if n is None else int(n)
    if n < 1:
        raise ConfigError("test-set size must be >= 1")
    rng = rng_streams.stream(config.seed, "test-samples")
    x = rng.normal(0.0, config.sigma_x, size=(n, config.p))
    gamma = np.clip(true_cvr(x, coefficients.w_cvr), _OPEN_LO, _OPEN_HI)
    y = (rng.random(n) < gamma).astype(np.int64)
    return SyntheticDataset(
        config=replace(config, n=n),
        coefficients=coefficients,
        x=x,
        gamma_true=gamma,
        y_true=y,
        role="test",
    )


# ---------------------------------------------------------------------------
# JSON-Lines persistence: one header record, then one record per sample.
# ---------------------------------------------------------------------------

_TRAIN_KEYS = ("x", "ts_click", "d", "e", "gamma_true", "theta_true",
               "y_true", "o_true", "y_obs")


def _sample_record(ds: SyntheticDataset, i: int) -> dict:
    if ds.role == "train":
        return {
            "x": ds.x[i].tolist(),
            "ts_click": float(ds.ts_click[i]),
            "d": float(ds.d[i]),
            "e": float(ds.e[i]),
            "gamma_true": float(ds.gamma_true[i]),
            "theta_true": float(ds.theta_true[i]),
            "y_true": int(ds.y_true[i]),
            "o_true": int(ds.o_true[i]),
            "y_obs": int(ds.y_obs[i]),
        }
    return {
        "x": ds.x[i].tolist(),
        "gamma_true": float(ds.gamma_true[i]),
        "y_true": int(ds.y_true[i]),
    }


def dataset_to_jsonl(ds: SyntheticDataset) -> str:
    header = {
        "kind": "delaycvr-dataset",
        "role": ds.role,
        "config": asdict(ds.config),
        "coefficients": {
            "w_cvr": ds.coefficients.w_cvr.tolist(),
            "w_expo": ds.coefficients.w_expo.tolist(),
        },
    }
    lines = [json.dumps(header)]
    lines.extend(json.dumps(_sample_record(ds, i)) for i in range(ds.n))
    return "\n".join(lines) + "\n"


def write_dataset(ds: SyntheticDataset, path) -> None:
    atomic_write_text(path, dataset_to_jsonl(ds))


def read_dataset(path) -> SyntheticDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "delaycvr-dataset":
            raise InvalidInputError(f"{path}: not a dataset file")
        config = SynthConfig(**header["config"])
        coeffs = Coefficients(
            w_cvr=np.asarray(header["coefficients"]["w_cvr"], dtype=np.float64),
            w_expo=np.asarray(header["coefficients"]["w_expo"], dtype=np.float64),
        )
        role = header["role"]
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise InvalidInputError(f"{path}: dataset has no sample records")

    def column(key, dtype=np.float64):
        if key not in records[0]:
            return None
        return np.array([r[key] for r in records], dtype=dtype)

    return SyntheticDataset(
        config=config,
        coefficients=coeffs,
        x=np.array([r["x"] for r in records], dtype=np.float64),
        gamma_true=column("gamma_true"),
        y_true=column("y_true", np.int64),
        ts_click=column("ts_click"),
        d=column("d"),
        e=column("e"),
        theta_true=column("theta_true"),
        o_true=column("o_true", np.int64),
        y_obs=column("y_obs", np.int64),
        role=role,
    )
