"""Independent oracles the tests check implementations against.

These deliberately re-derive everything from first principles (outcome
enumeration, finite differences) and never call the code paths they
verify.
"""

import math

import numpy as np


def outcome_table(gamma: float, theta: float):
    """All four (O, Y) outcomes with their probabilities and Y_obs = O*Y.

    O and Y are conditionally independent given (x, e), so the joint is
    the product of the marginals.
    """
    rows = []
    for o in (0, 1):
        for y in (0, 1):
            prob = (theta if o else 1.0 - theta) * (gamma if y else 1.0 - gamma)
            rows.append((prob, o, y, o * y))
    return rows


def enum_expectation(gamma: float, theta: float, term_fn):
    """Exact expectation of term_fn(y_obs) over the four outcomes."""
    return sum(prob * term_fn(y_obs) for prob, _, _, y_obs in outcome_table(gamma, theta))


def enum_variance(gamma: float, theta: float, term_fn):
    """Exact variance of term_fn(y_obs) over the four outcomes."""
    mean = enum_expectation(gamma, theta, term_fn)
    second = sum(prob * term_fn(y_obs) ** 2 for prob, _, _, y_obs in outcome_table(gamma, theta))
    return second - mean**2


def ips_term(pred: float, theta: float):
    """Per-sample summand of the inverse-propensity estimator."""
    d1, d0 = -math.log(pred), -math.log(1.0 - pred)

    def term(y_obs):
        w = y_obs / theta
        return w * d1 + (1.0 - w) * d0

    return term


def icvr_term(pred_g: float, gamma: float):
    """Per-sample summand of the inverse-conversion-rate estimator."""
    d1, d0 = -math.log(pred_g), -math.log(1.0 - pred_g)

    def term(y_obs):
        w = y_obs / gamma
        return w * d1 + (1.0 - w) * d0

    return term


def ideal_cvr_term(pred: float, gamma: float) -> float:
    """gamma * delta1 + (1 - gamma) * delta0: the ideal per-sample CVR loss."""
    return -gamma * math.log(pred) - (1.0 - gamma) * math.log(1.0 - pred)


def ideal_propensity_term(pred_g: float, theta: float) -> float:
    """theta * delta1(g) + (1 - theta) * delta0(g)."""
    return -theta * math.log(pred_g) - (1.0 - theta) * math.log(1.0 - pred_g)


def finite_difference_grad(loss_fn, params: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar loss over a parameter vector."""
    grad = np.empty_like(params)
    for j in range(params.shape[0]):
        up = params.copy()
        down = params.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (loss_fn(up) - loss_fn(down)) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / denom
