"""Loss estimators for delayed-feedback CVR prediction.

All estimators share the weighted cross-entropy shape

    (1/N) sum_i  w_i * delta1(pred_i) + (1 - w_i) * delta0(pred_i)

with delta1(p) = -log(p), delta0(p) = -log(1 - p):

  * ideal loss: w_i = true label (generator-only diagnostic),
  * IPS estimator: w_i = y_obs_i / theta_i (inverse propensity),
  * ICVR estimator: w_i = y_obs_i / gamma_i (inverse conversion rate),
  * non-negative estimator: per-sample IPS/ICVR terms clamped at zero.

Inverse weights can exceed 1, so the IPS/ICVR estimates may be negative;
the non-negative variant trades a little bias for a guaranteed sign and
lower variance. All functions are pure and reduce in a fixed
left-to-right order, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivisionGuardError, InvalidInputError, MissingGroundTruthError
from .models import LinearSigmoidModel, augment_with_elapsed, clamped_sigmoid

_OPEN_LO = float(np.nextafter(0.0, 1.0))
_OPEN_HI = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class ClipPolicy:
    """Clamp denominators into [epsilon, 1] before inversion.

    The inverse weights 1/theta and 1/gamma blow up exactly in the
    severe-delay regimes this toolkit targets; clipping is applied only
    inside loss and gradient evaluation, never to stored predictions.
    """

    epsilon: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.epsilon < 0.5):
            raise InvalidInputError("clip epsilon must lie in (0, 0.5)")

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.epsilon, 1.0)

    def count_clipped(self, values: np.ndarray) -> int:
        return int(np.sum(np.asarray(values) < self.epsilon))


@dataclass(frozen=True)
class DeltaPair:
    """Loss contributions of the two label outcomes at one prediction."""

    delta1: np.ndarray | float
    delta0: np.ndarray | float


@dataclass(frozen=True)
class LossDiagnostics:
    """What the denominator clamp actually did during one evaluation."""

    clamped_denominators: np.ndarray
    n_clipped: int


def _as_prob(preds) -> np.ndarray:
    p = np.atleast_1d(np.asarray(preds, dtype=np.float64))
    if np.any((p < 0.0) | (p > 1.0)) or not np.all(np.isfinite(p)):
        raise InvalidInputError("predictions must lie in [0, 1]")
    return np.clip(p, _OPEN_LO, _OPEN_HI)


def _delta1(p: np.ndarray) -> np.ndarray:
    return -np.log(p)


def _delta0(p: np.ndarray) -> np.ndarray:
    return -np.log1p(-p)


def cross_entropy_deltas(pred) -> DeltaPair:
    """Binary cross-entropy deltas (-log p, -log(1-p)) at a prediction.

    Accepts a scalar or an array; inputs are validated to [0, 1] and
    nudged into the open interval so both deltas stay finite.
    """
    p = _as_prob(pred)
    d1, d0 = _delta1(p), _delta0(p)
    if np.ndim(pred) == 0:
        return DeltaPair(float(d1[0]), float(d0[0]))
    return DeltaPair(d1, d0)


def _binary(values, name: str) -> np.ndarray:
    y = np.atleast_1d(np.asarray(values))
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError(f"{name} must be 0/1")
    return y.astype(np.float64)


def _weighted_ce_terms(preds: np.ndarray, w: np.ndarray) -> np.ndarray:
    return w * _delta1(preds) + (1.0 - w) * _delta0(preds)


def _inverse_weights(y_obs: np.ndarray, denominators, clip: ClipPolicy | None, kind: str):
    """w_i = y_obs_i / denominator_i with the configured clamp.

    With clipping disabled (clip=None) a zero denominator under an
    observed positive is a division guard error; denominators never enter
    where y_obs = 0.
    """
    d = np.atleast_1d(np.asarray(denominators, dtype=np.float64))
    if d.shape != y_obs.shape:
        raise InvalidInputError(f"{kind} length does not match batch")
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise InvalidInputError(f"{kind} must lie in [0, 1]")
    if clip is not None:
        dc = clip.clamp(d)
        n_clipped = clip.count_clipped(d)
    else:
        dc = d
        n_clipped = 0
        if np.any((dc == 0.0) & (y_obs == 1.0)):
            raise DivisionGuardError(
                f"zero {kind} under an observed positive with clipping disabled"
            )
    w = np.zeros_like(y_obs)
    pos = y_obs == 1.0
    w[pos] = 1.0 / dc[pos]
    return w, LossDiagnostics(clamped_denominators=dc, n_clipped=n_clipped)


@dataclass
class LabeledBatch:
    """One mini-batch of per-click records.

    y_true / o_true / delay are generator-only extras; y_obs = o_true *
    y_true is enforced whenever both sides are present.
    """

    features: np.ndarray
    elapsed: np.ndarray | None
    y_obs: np.ndarray
    y_true: np.ndarray | None = None
    o_true: np.ndarray | None = None
    delay: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.y_obs = _binary(self.y_obs, "y_obs")
        n = self.features.shape[0]
        if self.y_obs.shape[0] != n:
            raise InvalidInputError("y_obs length does not match features")
        for name in ("elapsed", "delay"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.atleast_1d(np.asarray(arr, dtype=np.float64))
                if arr.shape[0] != n:
                    raise InvalidInputError(f"{name} length does not match features")
                setattr(self, name, arr)
        if self.elapsed is not None and np.any(self.elapsed < 0):
            raise InvalidInputError("elapsed times must be nonnegative")
        for name in ("y_true", "o_true"):
            arr = getattr(self, name)
            if arr is not None:
                arr = _binary(arr, name)
                if arr.shape[0] != n:
                    raise InvalidInputError(f"{name} length does not match features")
                if np.any((self.y_obs == 1.0) & (arr == 0.0)):
                    raise InvalidInputError(f"y_obs = 1 requires {name} = 1")
                setattr(self, name, arr)

    def __len__(self) -> int:
        return self.features.shape[0]


def ideal_loss(preds, y_true) -> float:
    """Mean cross entropy against the true conversion labels.

    Only computable on synthetic data where the eventual labels are known.
    """
    if y_true is None:
        raise MissingGroundTruthError("ideal loss needs true conversion labels")
    p = _as_prob(preds)
    y = _binary(y_true, "y_true")
    if p.shape != y.shape:
        raise InvalidInputError("preds and y_true must have equal length")
    return float(np.mean(_weighted_ce_terms(p, y)))


def ips_per_sample(preds, y_obs, propensities, clip: ClipPolicy | None = ClipPolicy()):
    """Per-sample terms of the inverse-propensity-score estimator."""
    p = _as_prob(preds)
    y = _binary(y_obs, "y_obs")
    if p.shape != y.shape:
        raise InvalidInputError("preds and y_obs must have equal length")
    w, diag = _inverse_weights(y, propensities, clip, "propensities")
    return _weighted_ce_terms(p, w), diag


def ips_loss(preds, y_obs, propensities, clip: ClipPolicy | None = ClipPolicy(),
             return_diagnostics: bool = False):
    """Unbiased IPS estimate of the ideal CVR loss; may be negative."""
    terms, diag = ips_per_sample(preds, y_obs, propensities, clip)
    loss = float(np.mean(terms))
    return (loss, diag) if return_diagnostics else loss


def icvr_per_sample(preds_g, y_obs, cvrs, clip: ClipPolicy | None = ClipPolicy()):
    """Per-sample terms of the inverse-conversion-rate estimator."""
    p = _as_prob(preds_g)
    y = _binary(y_obs, "y_obs")
    if p.shape != y.shape:
        raise InvalidInputError("preds_g and y_obs must have equal length")
    w, diag = _inverse_weights(y, cvrs, clip, "cvrs")
    return _weighted_ce_terms(p, w), diag


def icvr_loss(preds_g, y_obs, cvrs, clip: ClipPolicy | None = ClipPolicy(),
              return_diagnostics: bool = False):
    """Unbiased ICVR estimate of the ideal propensity loss."""
    terms, diag = icvr_per_sample(preds_g, y_obs, cvrs, clip)
    loss = float(np.mean(terms))
    return (loss, diag) if return_diagnostics else loss


def nonneg_loss(per_sample_terms) -> float:
    """Mean of the per-sample estimator terms clamped at zero.

    The clamp sits inside the sample average, so the result is always
    nonnegative and never below the plain estimate on the same batch.
    """
    terms = np.atleast_1d(np.asarray(per_sample_terms, dtype=np.float64))
    return float(np.mean(np.maximum(terms, 0.0)))


def _deltas_arrays(deltas) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(deltas, DeltaPair):
        return (np.atleast_1d(np.asarray(deltas.delta1, dtype=np.float64)),
                np.atleast_1d(np.asarray(deltas.delta0, dtype=np.float64)))
    d1 = np.array([d.delta1 for d in deltas], dtype=np.float64)
    d0 = np.array([d.delta0 for d in deltas], dtype=np.float64)
    return d1, d0


def ips_variance(gammas, thetas, deltas) -> float:
    """Variance of the IPS estimate: (1/N^2) sum g(1/t - g)(d1 - d0)^2."""
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    t = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    d1, d0 = _deltas_arrays(deltas)
    if not (g.shape == t.shape == d1.shape == d0.shape):
        raise InvalidInputError("gammas, thetas and deltas must have equal length")
    if np.any(t == 0.0):
        raise DivisionGuardError("zero propensity in variance formula")
    n = g.shape[0]
    return float(np.sum(g * (1.0 / t - g) * (d1 - d0) ** 2) / n**2)


def icvr_variance(thetas, gammas, deltas_g) -> float:
    """Symbol-swapped variance for ICVR: (1/N^2) sum t(1/g - t)(d1 - d0)^2."""
    t = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    d1, d0 = _deltas_arrays(deltas_g)
    if not (g.shape == t.shape == d1.shape == d0.shape):
        raise InvalidInputError("thetas, gammas and deltas must have equal length")
    if np.any(g == 0.0):
        raise DivisionGuardError("zero CVR in variance formula")
    n = t.shape[0]
    return float(np.sum(t * (1.0 / g - t) * (d1 - d0) ** 2) / n**2)


def _model_inputs(model: LinearSigmoidModel, batch: LabeledBatch) -> np.ndarray:
    """Design matrix the model sees: raw x for f, [x; e] for g."""
    if model.augmented_with_elapsed:
        if batch.elapsed is None:
            raise InvalidInputError("augmented model needs elapsed times in the batch")
        return augment_with_elapsed(batch.features, batch.elapsed)
    return batch.features


def _grad_weighted_ce(x_in: np.ndarray, preds: np.ndarray, w: np.ndarray,
                      mask: np.ndarray | None = None) -> np.ndarray:
    """Exact gradient of the weighted cross entropy wrt [weights; bias].

    Per sample the chain rule collapses to (pred - w) times the input
    row; an optional 0/1 mask zeroes clamped samples.
    """
    resid = preds - w
    if mask is not None:
        resid = resid * mask
    n = x_in.shape[0]
    gw = resid @ x_in / n
    gb = np.sum(resid) / n
    return np.concatenate([gw, [gb]])


def grad_ips(model: LinearSigmoidModel, batch: LabeledBatch, propensities,
             clip: ClipPolicy | None = ClipPolicy()) -> np.ndarray:
    """Gradient of ips_loss at the model's current parameters."""
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    x_in = _model_inputs(model, batch)
    preds = clamped_sigmoid(model.logits(x_in))
    w, _ = _inverse_weights(batch.y_obs, propensities, clip, "propensities")
    return _grad_weighted_ce(x_in, preds, w)


def grad_icvr(model: LinearSigmoidModel, batch: LabeledBatch, cvrs,
              clip: ClipPolicy | None = ClipPolicy()) -> np.ndarray:
    """Gradient of icvr_loss; the mirror of grad_ips with CVR weights."""
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    x_in = _model_inputs(model, batch)
    preds = clamped_sigmoid(model.logits(x_in))
    w, _ = _inverse_weights(batch.y_obs, cvrs, clip, "cvrs")
    return _grad_weighted_ce(x_in, preds, w)


def grad_nonneg(model: LinearSigmoidModel, batch: LabeledBatch, denominators,
                clip: ClipPolicy | None = ClipPolicy()) -> np.ndarray:
    """Subgradient of the non-negative estimator.

    Samples whose per-sample term is negative contribute zero; terms
    exactly at zero keep their gradient (the documented subgradient
    choice). Denominators are propensities for a CVR model and CVRs for
    an augmented propensity model.
    """
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    x_in = _model_inputs(model, batch)
    preds = clamped_sigmoid(model.logits(x_in))
    w, _ = _inverse_weights(batch.y_obs, denominators, clip,
                            "cvrs" if model.augmented_with_elapsed else "propensities")
    terms = _weighted_ce_terms(preds, w)
    mask = (terms >= 0.0).astype(np.float64)
    return _grad_weighted_ce(x_in, preds, w, mask)
