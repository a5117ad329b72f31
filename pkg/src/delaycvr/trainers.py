"""The four training procedures compared in the benchmark.

* train_dla: alternating mini-batch updates of the CVR predictor f and
  the propensity estimator g, each re-weighting the other's loss (the
  dual learning algorithm). loss_variant picks the plain unbiased
  estimators or their non-negative clamped variants.
* train_naive: logistic regression on the observed labels.
* train_oracle: logistic regression on the true labels (ceiling).
* train_dfm: the delayed-feedback baseline that jointly fits a
  conversion probability and an exponential delay hazard.

All trainers are deterministic given (dataset, config): every random
choice comes from a (config.seed, tag) stream, and the mini-batch
shuffle stream is shared across trainers so reduction identities hold
step for step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_streams
from .errors import InvalidInputError, MissingGroundTruthError, TrainingDivergedError
from .fileio import atomic_write_text
from .losses import (
    ClipPolicy,
    LabeledBatch,
    grad_icvr,
    grad_ips,
    grad_nonneg,
    icvr_per_sample,
    ips_per_sample,
    nonneg_loss,
    _grad_weighted_ce,
    _weighted_ce_terms,
)
from .models import (
    LinearSigmoidModel,
    OptimizerState,
    apply_gradient_step,
    clamped_sigmoid,
    predict_cvr,
    predict_propensity,
    update_params,
)
from .synthgen import SyntheticDataset

OPTIMIZERS = ("sgd", "adam")
LOSS_VARIANTS = ("ips", "nonneg")
INIT_SCHEMES = ("zeros", "gaussian")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 0.01
    optimizer: str = "adam"
    max_epochs: int = 200
    convergence_tol: float = 1e-5
    clip_epsilon: float = 0.01
    loss_variant: str = "nonneg"
    init: str = "zeros"
    init_sigma: float = 0.01
    seed: int = 1

    def validate(self) -> None:
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"optimizer must be one of {OPTIMIZERS}")
        if self.max_epochs < 1:
            raise InvalidInputError("max_epochs must be >= 1")
        if self.convergence_tol <= 0:
            raise InvalidInputError("convergence_tol must be > 0")
        if self.loss_variant not in LOSS_VARIANTS:
            raise InvalidInputError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.init not in INIT_SCHEMES:
            raise InvalidInputError(f"init must be one of {INIT_SCHEMES}")
        ClipPolicy(self.clip_epsilon)

    @property
    def clip(self) -> ClipPolicy:
        return ClipPolicy(self.clip_epsilon)


@dataclass
class TrainReport:
    """What one training run did; the loss history is per epoch."""

    method: str
    epochs_run: int
    final_loss: float
    converged: bool
    clip_activations: int = 0
    loss_history: list = field(default_factory=list)
    aux_loss_history: list | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "epochs_run": self.epochs_run,
            "final_loss": self.final_loss,
            "converged": self.converged,
            "clip_activations": self.clip_activations,
            "loss_history": list(self.loss_history),
            "aux_loss_history": None if self.aux_loss_history is None
            else list(self.aux_loss_history),
        }

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict(), indent=2) + "\n")

    def loss_curve_csv(self) -> str:
        lines = ["epoch,loss"]
        lines.extend(f"{i},{v!r}" for i, v in enumerate(self.loss_history))
        return "\n".join(lines) + "\n"


def _init_model(p_in: int, config: TrainConfig, tag: str,
                augmented: bool) -> LinearSigmoidModel:
    if config.init == "zeros":
        weights = np.zeros(p_in)
        bias = 0.0
    else:
        rng = rng_streams.stream(config.seed, tag)
        draw = rng.normal(0.0, config.init_sigma, size=p_in + 1)
        weights, bias = draw[:-1], float(draw[-1])
    return LinearSigmoidModel(weights, bias, augmented_with_elapsed=augmented)


def _epoch_batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.shape[0], batch_size):
        yield order[start:start + batch_size]


def _check_batch_size(config: TrainConfig, n: int) -> None:
    if not (1 <= config.batch_size <= n):
        raise InvalidInputError(
            f"batch_size {config.batch_size} outside [1, {n}] for this dataset"
        )


def _converged(prev: float | None, cur: float, tol: float) -> bool:
    if prev is None:
        return False
    return abs(cur - prev) / max(abs(prev), 1e-12) < tol


def _require_finite(value: float, method: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"{method}: non-finite loss at epoch {epoch}", epoch=epoch
        )


def _fit_plain_logistic(x: np.ndarray, labels: np.ndarray, config: TrainConfig,
                        method: str) -> tuple[LinearSigmoidModel, TrainReport]:
    """Mini-batch logistic regression on fixed 0/1 labels."""
    config.validate()
    n = x.shape[0]
    _check_batch_size(config, n)
    labels = labels.astype(np.float64)
    model = _init_model(x.shape[1], config, "init-f", augmented=False)
    state = OptimizerState.fresh(x.shape[1] + 1, config.optimizer)
    shuffle = rng_streams.stream(config.seed, "shuffle")

    history: list[float] = []
    prev = None
    converged = False
    epochs = 0
    for epoch in range(config.max_epochs):
        order = shuffle.permutation(n)
        loss_sum = 0.0
        for idx in _epoch_batches(order, config.batch_size):
            xb = x[idx]
            wb = labels[idx]
            preds = clamped_sigmoid(model.logits(xb))
            terms = _weighted_ce_terms(preds, wb)
            loss_sum += float(np.mean(np.maximum(terms, 0.0))) * idx.shape[0]
            resid_mask = (terms >= 0.0).astype(np.float64)
            grad = _grad_weighted_ce(xb, preds, wb, resid_mask)
            apply_gradient_step(model, state, grad, config.learning_rate)
        epoch_loss = loss_sum / n
        _require_finite(epoch_loss, method, epoch)
        history.append(epoch_loss)
        epochs = epoch + 1
        if _converged(prev, epoch_loss, config.convergence_tol):
            converged = True
            break
        prev = epoch_loss

    report = TrainReport(method=method, epochs_run=epochs, final_loss=history[-1],
                         converged=converged, loss_history=history)
    return model, report


def train_naive(dataset: SyntheticDataset, config: TrainConfig):
    """Logistic regression against the observed conversion labels."""
    if dataset.y_obs is None:
        raise MissingGroundTruthError("dataset has no observed labels")
    return _fit_plain_logistic(dataset.x, dataset.y_obs, config, "naive")


def train_oracle(dataset: SyntheticDataset, config: TrainConfig):
    """Logistic regression against the unobservable true labels."""
    if dataset.y_true is None:
        raise MissingGroundTruthError("dataset has no true conversion labels")
    return _fit_plain_logistic(dataset.x, dataset.y_true, config, "oracle")


def train_dla(dataset: SyntheticDataset, config: TrainConfig,
              propensity_override: np.ndarray | None = None):
    """Alternating dual training of the CVR predictor and propensity estimator.

    Each iteration samples one mini-batch, updates f under the
    propensity-weighted CVR loss with g's predictions held fixed, then
    updates g under the CVR-weighted propensity loss with the updated f
    held fixed. propensity_override freezes the propensity side at the
    given per-sample values (used by tests to inject the true theta); no
    g is trained in that case and None is returned for it.

    Returns (f, g, report); report.loss_history tracks the CVR loss and
    report.aux_loss_history the propensity loss.
    """
    config.validate()
    if dataset.y_obs is None:
        raise MissingGroundTruthError("dataset has no observed labels")
    if dataset.e is None:
        raise MissingGroundTruthError("dataset has no elapsed times")
    x, e, y = dataset.x, dataset.e, dataset.y_obs
    n = x.shape[0]
    _check_batch_size(config, n)
    if propensity_override is not None:
        propensity_override = np.asarray(propensity_override, dtype=np.float64)
        if propensity_override.shape != (n,):
            raise InvalidInputError("propensity_override must have one value per sample")

    clip = config.clip
    nonneg = config.loss_variant == "nonneg"
    f = _init_model(x.shape[1], config, "init-f", augmented=False)
    state_f = OptimizerState.fresh(x.shape[1] + 1, config.optimizer)
    g = None
    state_g = None
    if propensity_override is None:
        g = _init_model(x.shape[1] + 1, config, "init-g", augmented=True)
        state_g = OptimizerState.fresh(x.shape[1] + 2, config.optimizer)
    shuffle = rng_streams.stream(config.seed, "shuffle")

    history_f: list[float] = []
    history_g: list[float] = []
    clip_hits = 0
    prev = None
    converged = False
    epochs = 0
    for epoch in range(config.max_epochs):
        order = shuffle.permutation(n)
        loss_f_sum = 0.0
        loss_g_sum = 0.0
        for idx in _epoch_batches(order, config.batch_size):
            batch = LabeledBatch(features=x[idx], elapsed=e[idx], y_obs=y[idx])
            if propensity_override is None:
                theta_hat = predict_propensity(g, batch.features, batch.elapsed)
            else:
                theta_hat = propensity_override[idx]

            preds_f = predict_cvr(f, batch.features)
            terms_f, diag_f = ips_per_sample(preds_f, batch.y_obs, theta_hat, clip)
            clip_hits += diag_f.n_clipped
            if nonneg:
                loss_f_sum += nonneg_loss(terms_f) * idx.shape[0]
                grad_f = grad_nonneg(f, batch, theta_hat, clip)
            else:
                loss_f_sum += float(np.mean(terms_f)) * idx.shape[0]
                grad_f = grad_ips(f, batch, theta_hat, clip)
            apply_gradient_step(f, state_f, grad_f, config.learning_rate)

            if propensity_override is None:
                gamma_hat = predict_cvr(f, batch.features)
                preds_g = predict_propensity(g, batch.features, batch.elapsed)
                terms_g, diag_g = icvr_per_sample(preds_g, batch.y_obs, gamma_hat, clip)
                clip_hits += diag_g.n_clipped
                if nonneg:
                    loss_g_sum += nonneg_loss(terms_g) * idx.shape[0]
                    grad_g = grad_nonneg(g, batch, gamma_hat, clip)
                else:
                    loss_g_sum += float(np.mean(terms_g)) * idx.shape[0]
                    grad_g = grad_icvr(g, batch, gamma_hat, clip)
                apply_gradient_step(g, state_g, grad_g, config.learning_rate)

        epoch_loss = loss_f_sum / n
        _require_finite(epoch_loss, "dla", epoch)
        history_f.append(epoch_loss)
        if propensity_override is None:
            epoch_loss_g = loss_g_sum / n
            _require_finite(epoch_loss_g, "dla", epoch)
            history_g.append(epoch_loss_g)
        epochs = epoch + 1
        if _converged(prev, epoch_loss, config.convergence_tol):
            converged = True
            break
        prev = epoch_loss

    report = TrainReport(
        method="nn-dla" if nonneg else "dla",
        epochs_run=epochs,
        final_loss=history_f[-1],
        converged=converged,
        clip_activations=clip_hits,
        loss_history=history_f,
        aux_loss_history=history_g if propensity_override is None else None,
    )
    return f, g, report


# ---------------------------------------------------------------------------
# Delayed feedback model baseline (exponential delay assumption)
# ---------------------------------------------------------------------------


@dataclass
class DfmModel:
    """Joint conversion-probability and exponential-delay-hazard model.

    p(x) = sigmoid(conversion logit); lambda(x) = exp(delay logit) > 0.
    CVR prediction for evaluation is p(x) alone.
    """

    conversion_weights: np.ndarray
    conversion_bias: float
    delay_weights: np.ndarray
    delay_bias: float

    def predict_cvr(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        return clamped_sigmoid(x @ self.conversion_weights + self.conversion_bias)

    def hazard(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        return np.exp(x @ self.delay_weights + self.delay_bias)

    def to_json_dict(self) -> dict:
        return {
            "kind": "dfm",
            "conversion": {
                "weights": self.conversion_weights.tolist(),
                "bias": float(self.conversion_bias),
            },
            "delay": {
                "weights": self.delay_weights.tolist(),
                "bias": float(self.delay_bias),
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DfmModel":
        return cls(
            conversion_weights=np.asarray(d["conversion"]["weights"], dtype=np.float64),
            conversion_bias=float(d["conversion"]["bias"]),
            delay_weights=np.asarray(d["delay"]["weights"], dtype=np.float64),
            delay_bias=float(d["delay"]["bias"]),
        )

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "DfmModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def _dfm_parts(model: DfmModel, batch: LabeledBatch):
    if batch.elapsed is None:
        raise InvalidInputError("delayed feedback model needs elapsed times")
    pos = batch.y_obs == 1.0
    if pos.any():
        if batch.delay is None or not np.all(np.isfinite(batch.delay[pos])):
            raise InvalidInputError("observed conversions need a finite delay d")
    x = batch.features
    z_c = x @ model.conversion_weights + model.conversion_bias
    z_d = x @ model.delay_weights + model.delay_bias
    p = clamped_sigmoid(z_c)
    lam = np.exp(z_d)
    return pos, p, lam, z_d


def dfm_negative_log_likelihood(model: DfmModel, batch: LabeledBatch) -> float:
    """Mean negative log likelihood of the exponential-delay model.

    Observed conversion:  -[log p + log lambda - lambda * d]
    No observation yet:   -log[(1 - p) + p * exp(-lambda * e)]
    """
    pos, p, lam, z_d = _dfm_parts(model, batch)
    terms = np.empty(len(batch))
    if pos.any():
        terms[pos] = -np.log(p[pos]) - z_d[pos] + lam[pos] * batch.delay[pos]
    neg = ~pos
    if neg.any():
        survive = np.exp(-lam[neg] * batch.elapsed[neg])
        terms[neg] = -np.log((1.0 - p[neg]) + p[neg] * survive)
    return float(np.mean(terms))


def dfm_gradient(model: DfmModel, batch: LabeledBatch) -> np.ndarray:
    """Gradient of the NLL wrt [conv_weights, conv_bias, delay_weights, delay_bias]."""
    pos, p, lam, _ = _dfm_parts(model, batch)
    n = len(batch)
    dz_c = np.empty(n)
    dz_d = np.empty(n)
    if pos.any():
        dz_c[pos] = p[pos] - 1.0
        dz_d[pos] = lam[pos] * batch.delay[pos] - 1.0
    neg = ~pos
    if neg.any():
        pn, ln, en = p[neg], lam[neg], batch.elapsed[neg]
        q = np.exp(-ln * en)
        a = (1.0 - pn) + pn * q
        dz_c[neg] = pn * (1.0 - pn) * (1.0 - q) / a
        dz_d[neg] = pn * ln * en * q / a
    x_aug = np.concatenate([batch.features, np.ones((n, 1))], axis=1)
    grad_c = dz_c @ x_aug / n
    grad_d = dz_d @ x_aug / n
    return np.concatenate([grad_c, grad_d])


def train_dfm(dataset: SyntheticDataset, config: TrainConfig):
    """Fit the delayed feedback baseline by mini-batch gradient descent."""
    config.validate()
    if dataset.y_obs is None:
        raise MissingGroundTruthError("dataset has no observed labels")
    if dataset.e is None:
        raise InvalidInputError("delayed feedback model needs elapsed times e")
    if dataset.d is None and np.any(dataset.y_obs == 1):
        raise InvalidInputError("delayed feedback model needs delays d for observed conversions")
    x, e, y = dataset.x, dataset.e, dataset.y_obs
    d = dataset.d if dataset.d is not None else np.zeros_like(e)
    n = x.shape[0]
    _check_batch_size(config, n)

    p_dim = x.shape[1]
    conv = _init_model(p_dim, config, "init-f", augmented=False)
    delay = _init_model(p_dim, config, "init-g", augmented=False)
    model = DfmModel(conv.weights, conv.bias, delay.weights, delay.bias)
    params = np.concatenate([model.conversion_weights, [model.conversion_bias],
                             model.delay_weights, [model.delay_bias]])
    state = OptimizerState.fresh(params.shape[0], config.optimizer)
    shuffle = rng_streams.stream(config.seed, "shuffle")

    def unpack():
        model.conversion_weights = params[:p_dim]
        model.conversion_bias = float(params[p_dim])
        model.delay_weights = params[p_dim + 1:2 * p_dim + 1]
        model.delay_bias = float(params[-1])

    history: list[float] = []
    prev = None
    converged = False
    epochs = 0
    for epoch in range(config.max_epochs):
        order = shuffle.permutation(n)
        loss_sum = 0.0
        for idx in _epoch_batches(order, config.batch_size):
            batch = LabeledBatch(features=x[idx], elapsed=e[idx], y_obs=y[idx],
                                 delay=d[idx])
            loss_b = dfm_negative_log_likelihood(model, batch)
            grad = dfm_gradient(model, batch)
            loss_sum += loss_b * idx.shape[0]
            update_params(params, state, grad, config.learning_rate)
            unpack()
        epoch_loss = loss_sum / n
        _require_finite(epoch_loss, "dfm", epoch)
        history.append(epoch_loss)
        epochs = epoch + 1
        if _converged(prev, epoch_loss, config.convergence_tol):
            converged = True
            break
        prev = epoch_loss

    report = TrainReport(method="dfm", epochs_run=epochs, final_loss=history[-1],
                         converged=converged, loss_history=history)
    return model, report
