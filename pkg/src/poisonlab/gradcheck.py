"""Finite-difference verification of analytic gradients (losses and model)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import model as m
from .losses import LossOutput, ce_loss, dece_loss, gce_loss, intrust_loss

FD_STEP = 1e-6
REL_TOL = 1e-4
ABS_TOL = 1e-8

LOSS_SUITE: dict[str, Callable[[np.ndarray, np.ndarray], LossOutput]] = {
    "ce": lambda p, y: ce_loss(p, y),
    "dece": lambda p, y: dece_loss(p, y, alpha=0.99, eps=0.1, epoch=3),
    "gce": lambda p, y: gce_loss(p, y, q=0.7),
    "intrust": lambda p, y: intrust_loss(p, y, lambda_ce=1.0, lambda_dce=1.0, delta=0.5),
}


def max_mismatch(analytic: np.ndarray, fd: np.ndarray, rel_tol: float = REL_TOL) -> float:
    """Largest violation of |a - f| <= abs_tol + rel_tol * max(|a|, |f|), in
    units of the allowance (values <= 1 pass)."""
    scale = ABS_TOL + rel_tol * np.maximum(np.abs(analytic), np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / scale))


def random_instance(rng: np.random.Generator, max_t: int = 5, max_v: int = 10):
    """A (T, V) probability matrix with every entry >= 1e-3, plus targets."""
    T = int(rng.integers(1, max_t + 1))
    V = int(rng.integers(2, max_v + 1))
    raw = rng.uniform(0.05, 1.0, size=(T, V))
    probs = raw / raw.sum(axis=1, keepdims=True)
    target = rng.integers(0, V, size=T)
    return probs, target


def fd_loss_grad(loss_fn, probs: np.ndarray, target: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar loss with respect to each probability."""
    out = np.zeros_like(probs)
    for t in range(probs.shape[0]):
        for i in range(probs.shape[1]):
            plus = probs.copy()
            minus = probs.copy()
            plus[t, i] += step
            minus[t, i] -= step
            out[t, i] = (loss_fn(plus, target).loss - loss_fn(minus, target).loss) / (2 * step)
    return out


def check_loss_gradients(n_instances: int = 100, seed: int = 0, rel_tol: float = REL_TOL) -> dict[str, float]:
    """Worst mismatch per loss kind over random instances; all must be <= 1."""
    rng = np.random.default_rng(seed)
    worst = {kind: 0.0 for kind in LOSS_SUITE}
    for _ in range(n_instances):
        probs, target = random_instance(rng)
        for kind, fn in LOSS_SUITE.items():
            analytic = fn(probs, target).grad
            fd = fd_loss_grad(fn, probs, target)
            worst[kind] = max(worst[kind], max_mismatch(analytic, fd, rel_tol))
    return worst


def _scalar_loss(params: m.ModelParams, source, target, loss_fn) -> float:
    probs, _ = m.forward(params, source, target)
    return loss_fn(probs, m.decoder_targets(target)).loss


def fd_param_grads(
    params: m.ModelParams, source, target, loss_fn, step: float = FD_STEP
) -> dict[str, np.ndarray]:
    """Central differences of loss(forward(params)) over every parameter coordinate."""
    out = {}
    for name, arr in params.as_dict().items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = _scalar_loss(params, source, target, loss_fn)
            flat[j] = orig - step
            down = _scalar_loss(params, source, target, loss_fn)
            flat[j] = orig
            gflat[j] = (up - down) / (2 * step)
        out[name] = g
    return out


def check_model_gradients(
    seed: int = 7, V: int = 8, d: int = 4, h: int = 6, rel_tol: float = REL_TOL
) -> dict[str, float]:
    """End-to-end check: backward() vs finite differences for each loss kind.

    Uses a target of length 2 so the decoder runs T = 3 steps.
    """
    params = m.init_params(V, d, h, seed)
    source = [4, 6, 7, 5]
    target = [5, 4]
    worst = {}
    for kind, fn in LOSS_SUITE.items():
        probs, cache = m.forward(params, source, target)
        analytic = m.backward(params, cache, fn(probs, m.decoder_targets(target)).grad)
        fd = fd_param_grads(params, source, target, fn)
        worst[kind] = max(
            max_mismatch(analytic[name], fd[name], rel_tol) for name in analytic
        )
    return worst


def run_all(verbose: bool = True) -> bool:
    """Full finite-difference suite; returns True when everything passes."""
    ok = True
    loss_report = check_loss_gradients(n_instances=25)
    for kind, worst in sorted(loss_report.items()):
        passed = worst <= 1.0
        ok &= passed
        if verbose:
            print(f"loss-grad  {kind:8s} worst={worst:.3e}  {'ok' if passed else 'FAIL'}")
    model_report = check_model_gradients()
    for kind, worst in sorted(model_report.items()):
        passed = worst <= 1.0
        ok &= passed
        if verbose:
            print(f"model-grad {kind:8s} worst={worst:.3e}  {'ok' if passed else 'FAIL'}")
    return ok
