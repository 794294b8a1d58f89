"""Training objectives with analytic gradients taken with respect to probabilities.

Every loss receives a (T, V) row-stochastic probability matrix and a length-T
integer target sequence, normalizes by 1/T, and returns the scalar loss plus
the full (T, V) gradient d(loss)/d(prob). Composing with the softmax Jacobian
is the model's job, which keeps each formula here in closed form:

  ce       L = -(1/T) sum_t log p[t, y_t]
  dece     L = -(1/T) sum_t sum_i y'[t,i] log p'[t,i],
           y' = (1-eps) onehot(y) + eps/V,  p' = a*p + (1-a)*y',  a = alpha**epoch
  gce      L =  (1/T) sum_t (1 - p[t, y_t]**q) / q
  intrust  L = lambda_ce * L_ce + lambda_dce * L_rev,
           L_rev = -(1/T) sum_t sum_i p[t,i] log(delta*p[t,i] + (1-delta)*y[t,i])

The dece target-coordinate gradient is bounded: |dL/dp| <= (1/T) a/(1-a) for
alpha < 1, however small p gets, whereas plain ce grows like 1/(T p).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-12

LOSS_KINDS = ("ce", "dece", "gce", "intrust")


class LossConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    """Which objective to train with, and its hyperparameters."""

    kind: str = "ce"
    alpha: float = 0.99
    eps: float = 0.1
    q: float = 0.7
    lambda_ce: float = 1.0
    lambda_dce: float = 1.0
    delta: float = 0.5
    epoch: int = 1

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise LossConfigError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not 0.0 < self.alpha <= 1.0:
            raise LossConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.eps < 1.0:
            raise LossConfigError(f"eps must lie in [0, 1), got {self.eps}")
        if not 0.0 < self.q <= 1.0:
            raise LossConfigError(f"q must lie in (0, 1], got {self.q}")
        if self.lambda_ce < 0.0 or self.lambda_dce < 0.0:
            raise LossConfigError("lambda_ce and lambda_dce must be >= 0")
        if not 0.0 < self.delta < 1.0:
            raise LossConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.epoch < 1:
            raise LossConfigError(f"epoch must be >= 1, got {self.epoch}")


@dataclass(frozen=True)
class LossOutput:
    loss: float
    grad: np.ndarray
    floored: int = 0  # how many log arguments were clamped to LOG_FLOOR


def _as_arrays(probs, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(target, dtype=np.int64)
    if p.ndim != 2:
        raise ValueError(f"probs must be a (T, V) matrix, got shape {p.shape}")
    if y.shape != (p.shape[0],):
        raise ValueError(f"target length {y.shape} does not match T={p.shape[0]}")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise ValueError("target ids must lie in [0, V)")
    return p, y


def label_smooth(target, eps: float, V: int) -> np.ndarray:
    """Smoothed label rows: (1-eps) on the target coordinate plus eps/V everywhere."""
    if not 0.0 <= eps < 1.0:
        raise LossConfigError(f"eps must lie in [0, 1), got {eps}")
    y = np.asarray(target, dtype=np.int64)
    out = np.full((y.shape[0], V), eps / V, dtype=np.float64)
    out[np.arange(y.shape[0]), y] += 1.0 - eps
    return out


def ce_loss(probs, target) -> LossOutput:
    """Cross-entropy against hard labels; gradient only on target coordinates."""
    p, y = _as_arrays(probs, target)
    T = p.shape[0]
    pt = p[np.arange(T), y]
    floored = int(np.sum(pt < LOG_FLOOR))
    pt = np.maximum(pt, LOG_FLOOR)
    loss = -float(np.mean(np.log(pt)))
    grad = np.zeros_like(p)
    grad[np.arange(T), y] = -1.0 / (T * pt)
    return LossOutput(loss, grad, floored)


def dece_loss(probs, target, alpha: float, eps: float, epoch: int) -> LossOutput:
    """Cross-entropy on smoothed labels against an epoch-scheduled blend of
    the predicted distribution and those labels.

    With alpha == 1 the blend vanishes and this reduces exactly to
    cross-entropy on the (possibly smoothed) labels.
    """
    if not 0.0 < alpha <= 1.0:
        raise LossConfigError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 <= eps < 1.0:
        raise LossConfigError(f"eps must lie in [0, 1), got {eps}")
    if epoch < 0:
        raise LossConfigError(f"epoch must be >= 0, got {epoch}")
    p, y = _as_arrays(probs, target)
    T, V = p.shape
    a = alpha**epoch
    y_smooth = label_smooth(y, eps, V)
    blended = a * p + (1.0 - a) * y_smooth
    floored = int(np.sum(blended < LOG_FLOOR))
    blended = np.maximum(blended, LOG_FLOOR)
    loss = -float(np.sum(y_smooth * np.log(blended))) / T
    grad = -(a / T) * y_smooth / blended
    return LossOutput(loss, grad, floored)


def gce_loss(probs, target, q: float) -> LossOutput:
    """Generalized cross-entropy (1 - p^q)/q; approaches ce as q -> 0."""
    if not 0.0 < q <= 1.0:
        raise LossConfigError(f"q must lie in (0, 1], got {q}")
    p, y = _as_arrays(probs, target)
    T = p.shape[0]
    pt = p[np.arange(T), y]
    floored = int(np.sum(pt < LOG_FLOOR))
    # The floor keeps p^(q-1) large-but-finite at p == 0 for q < 1.
    pt = np.maximum(pt, LOG_FLOOR)
    loss = float(np.mean((1.0 - pt**q) / q))
    grad = np.zeros_like(p)
    grad[np.arange(T), y] = -(pt ** (q - 1.0)) / T
    return LossOutput(loss, grad, floored)


def intrust_loss(probs, target, lambda_ce: float, lambda_dce: float, delta: float) -> LossOutput:
    """Weighted sum of cross-entropy and a reversed term that trusts the
    prediction: -(1/T) sum p log(delta*p + (1-delta)*y)."""
    if lambda_ce < 0.0 or lambda_dce < 0.0:
        raise LossConfigError("lambda_ce and lambda_dce must be >= 0")
    if not 0.0 < delta < 1.0:
        raise LossConfigError(f"delta must lie in (0, 1), got {delta}")
    p, y = _as_arrays(probs, target)
    T, V = p.shape
    onehot = np.zeros_like(p)
    onehot[np.arange(T), y] = 1.0
    mix = delta * p + (1.0 - delta) * onehot
    floored = int(np.sum(mix < LOG_FLOOR))
    mix = np.maximum(mix, LOG_FLOOR)
    log_mix = np.log(mix)
    rev_loss = -float(np.sum(p * log_mix)) / T
    rev_grad = -(log_mix + p * delta / mix) / T
    ce = ce_loss(p, y)
    loss = lambda_ce * ce.loss + lambda_dce * rev_loss
    grad = lambda_ce * ce.grad + lambda_dce * rev_grad
    return LossOutput(loss, grad, floored + ce.floored)


def loss_dispatch(spec: LossSpec, probs, target) -> LossOutput:
    """Route to the configured objective; the epoch index only reaches dece."""
    if spec.kind == "ce":
        return ce_loss(probs, target)
    if spec.kind == "dece":
        return dece_loss(probs, target, spec.alpha, spec.eps, spec.epoch)
    if spec.kind == "gce":
        return gce_loss(probs, target, spec.q)
    if spec.kind == "intrust":
        return intrust_loss(probs, target, spec.lambda_ce, spec.lambda_dce, spec.delta)
    raise LossConfigError(f"unknown loss kind {spec.kind!r}")
