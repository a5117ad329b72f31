"""Linear sigmoid models and the gradient-step machinery trainers share.

Two model roles live on the same class: the conversion-rate predictor f
(features x only) and the propensity estimator g (features x with the
elapsed time appended as one extra raw coordinate, flagged by
``augmented_with_elapsed``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .fileio import atomic_write_text

# Tightest open-interval clamp representable in float64. Model predictions
# are clamped here so they stay strictly inside (0, 1) even when the logit
# saturates (sigmoid(40) already rounds to 1.0 in double precision).
PRED_MIN = float(np.nextafter(0.0, 1.0))
PRED_MAX = float(np.nextafter(1.0, 0.0))

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def sigmoid(z):
    """Numerically stable logistic function 1 / (1 + exp(-z)).

    Branches on the sign of z so neither exp overflows for |z| up to (and
    well beyond) 700. Accepts scalars or arrays; total on finite input.
    """
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if out.ndim == 0 else out


def clamped_sigmoid(z):
    """Sigmoid clamped into the open interval (0, 1) by one-ulp bounds."""
    return np.clip(sigmoid(z), PRED_MIN, PRED_MAX)


@dataclass
class LinearSigmoidModel:
    """Weight vector + bias; prediction is sigmoid(weights . x + bias)."""

    weights: np.ndarray
    bias: float = 0.0
    augmented_with_elapsed: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise InvalidInputError("weights must be a 1-d vector")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise InvalidInputError("model parameters must be finite")

    @property
    def p_in(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LinearSigmoidModel":
        return LinearSigmoidModel(self.weights.copy(), self.bias, self.augmented_with_elapsed)

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.p_in:
            raise InvalidInputError(
                f"feature dimension {x.shape[-1]} does not match model p_in={self.p_in}"
            )
        return x @ self.weights + self.bias

    def to_json_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "augmented_with_elapsed": bool(self.augmented_with_elapsed),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LinearSigmoidModel":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            bias=float(d["bias"]),
            augmented_with_elapsed=bool(d["augmented_with_elapsed"]),
        )

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "LinearSigmoidModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def predict_cvr(model: LinearSigmoidModel, x: np.ndarray):
    """Predicted conversion probability, strictly inside (0, 1).

    x may be a single feature vector (p,) or a matrix (n, p).
    """
    p = clamped_sigmoid(model.logits(x))
    return float(p) if np.ndim(p) == 0 else p


def augment_with_elapsed(x: np.ndarray, e) -> np.ndarray:
    """Append the elapsed time as one extra feature column."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    e = np.broadcast_to(np.asarray(e, dtype=np.float64), (x.shape[0],))
    return np.concatenate([x, e[:, None]], axis=1)


def predict_propensity(model: LinearSigmoidModel, x: np.ndarray, e):
    """Predicted observation probability on the augmented features [x; e]."""
    e_arr = np.asarray(e, dtype=np.float64)
    if np.any(e_arr < 0):
        raise InvalidInputError("elapsed time must be nonnegative")
    single = np.ndim(x) == 1 and np.ndim(e) == 0
    p = clamped_sigmoid(model.logits(augment_with_elapsed(x, e_arr)))
    return float(p[0]) if single else p


@dataclass
class OptimizerState:
    """Per-parameter moment accumulators plus a step counter.

    Plain SGD keeps the accumulators at zero; the adaptive-moment rule
    (beta1=0.9, beta2=0.999, eps=1e-8) uses them in the standard
    bias-corrected form.
    """

    rule: str
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n_params: int, rule: str) -> "OptimizerState":
        if rule not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer rule: {rule!r}")
        return cls(rule=rule, m=np.zeros(n_params), v=np.zeros(n_params))


def update_params(params: np.ndarray, state: OptimizerState, grad: np.ndarray, lr: float) -> np.ndarray:
    """One optimizer step on a flat parameter vector (in place).

    Increments the step counter by exactly one. Raises
    TrainingDivergedError on a non-finite gradient.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise InvalidInputError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError("non-finite gradient")
    state.step += 1
    if state.rule == "sgd":
        params -= lr * grad
    else:
        state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
        state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = state.m / (1.0 - ADAM_BETA1 ** state.step)
        v_hat = state.v / (1.0 - ADAM_BETA2 ** state.step)
        params -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params


def apply_gradient_step(
    model: LinearSigmoidModel,
    state: OptimizerState,
    grad: np.ndarray,
    lr: float,
) -> tuple[LinearSigmoidModel, OptimizerState]:
    """Move [weights; bias] one step along -grad per the state's rule.

    Mutates the model and state in place and returns them; training owns a
    private copy so this never touches a published model.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (model.p_in + 1,):
        raise InvalidInputError("gradient must have length p_in + 1 (weights then bias)")
    packed = np.concatenate([model.weights, [model.bias]])
    update_params(packed, state, grad, lr)
    model.weights[:] = packed[:-1]
    model.bias = float(packed[-1])
    return model, state
