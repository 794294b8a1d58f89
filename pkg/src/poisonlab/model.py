"""Tiny encoder-decoder in float64 numpy with exact manual backpropagation.

The encoder mean-pools source token embeddings into a context vector c; a
single tanh recurrent cell decodes with teacher forcing:

    h_0 = tanh(W_c c + b_c)
    h_t = tanh(W_h h_{t-1} + W_e E[prev] + b_h)
    z_t = W_o h_t + b_o,   p_t = softmax(z_t)

The decoder consumes BOS + target and is scored against target + EOS, so a
stored target of length L yields T = L + 1 probability rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .textcore import BOS_ID, EOS_ID

PARAM_FIELDS = ("E", "W_c", "b_c", "W_h", "W_e", "b_h", "W_o", "b_o")

INIT_SCALE = 0.08


@dataclass
class ModelParams:
    E: np.ndarray    # (V, d) token embeddings
    W_c: np.ndarray  # (h, d) context projection
    b_c: np.ndarray  # (h,)
    W_h: np.ndarray  # (h, h) recurrent weights
    W_e: np.ndarray  # (h, d) input projection
    b_h: np.ndarray  # (h,)
    W_o: np.ndarray  # (V, h) output head
    b_o: np.ndarray  # (V,)

    @property
    def V(self) -> int:
        return self.E.shape[0]

    @property
    def d(self) -> int:
        return self.E.shape[1]

    @property
    def h(self) -> int:
        return self.W_h.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}


def init_params(V: int, d: int, h: int, seed: int) -> ModelParams:
    """All entries i.i.d. uniform on [-INIT_SCALE, INIT_SCALE] from one seeded stream."""
    if min(V, d, h) < 1:
        raise ValueError(f"V, d, h must all be >= 1, got {(V, d, h)}")
    rng = np.random.default_rng(seed)

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return ModelParams(
        E=u(V, d), W_c=u(h, d), b_c=u(h), W_h=u(h, h),
        W_e=u(h, d), b_h=u(h), W_o=u(V, h), b_o=u(V),
    )


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.as_dict().items()}


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decoder_targets(target: Sequence[int]) -> np.ndarray:
    """Step-wise labels the decoder is scored against: target tokens then EOS."""
    return np.asarray(list(target) + [EOS_ID], dtype=np.int64)


@dataclass
class ForwardCache:
    source: np.ndarray   # (S,) source token ids
    inputs: np.ndarray   # (T,) teacher-forced decoder inputs (BOS first)
    c: np.ndarray        # (d,) mean source embedding
    hs: np.ndarray       # (T+1, h) hidden states h_0..h_T
    probs: np.ndarray    # (T, V)


def forward(
    params: ModelParams,
    source: Sequence[int],
    target: Sequence[int],
    teacher_forcing: bool = True,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the decoder for len(target)+1 steps; returns (probs, cache)."""
    src = np.asarray(source, dtype=np.int64)
    if src.size == 0:
        raise ValueError("source must be non-empty")
    T = len(target) + 1
    c = params.E[src].mean(axis=0)
    hs = np.empty((T + 1, params.h))
    probs = np.empty((T, params.V))
    inputs = np.empty(T, dtype=np.int64)
    hs[0] = np.tanh(params.W_c @ c + params.b_c)
    prev = BOS_ID
    for t in range(T):
        inputs[t] = prev
        hs[t + 1] = np.tanh(params.W_h @ hs[t] + params.W_e @ params.E[prev] + params.b_h)
        probs[t] = softmax(params.W_o @ hs[t + 1] + params.b_o)
        if teacher_forcing:
            prev = target[t] if t < len(target) else EOS_ID
        else:
            prev = int(np.argmax(probs[t]))
    return probs, ForwardCache(source=src, inputs=inputs, c=c, hs=hs, probs=probs)


def backward(params: ModelParams, cache: ForwardCache, dldp: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate d(loss)/d(prob) rows into gradients for every parameter."""
    probs = cache.probs
    if dldp.shape != probs.shape:
        raise ValueError(f"dldp shape {dldp.shape} does not match probs shape {probs.shape}")
    T = probs.shape[0]
    # Softmax Jacobian: dL/dz_i = p_i (dL/dp_i - sum_j p_j dL/dp_j).
    dz = probs * (dldp - np.sum(probs * dldp, axis=1, keepdims=True))
    grads = zero_grads(params)
    grads["W_o"] = dz.T @ cache.hs[1:]
    grads["b_o"] = dz.sum(axis=0)
    carry = np.zeros(params.h)
    for t in range(T, 0, -1):
        g = dz[t - 1] @ params.W_o + carry
        a = g * (1.0 - cache.hs[t] ** 2)
        grads["W_h"] += np.outer(a, cache.hs[t - 1])
        grads["W_e"] += np.outer(a, params.E[cache.inputs[t - 1]])
        grads["b_h"] += a
        grads["E"][cache.inputs[t - 1]] += params.W_e.T @ a
        carry = params.W_h.T @ a
    a0 = carry * (1.0 - cache.hs[0] ** 2)
    grads["W_c"] = np.outer(a0, cache.c)
    grads["b_c"] = a0
    dc = params.W_c.T @ a0
    np.add.at(grads["E"], cache.source, dc / cache.source.size)
    return grads


def generate(params: ModelParams, source: Sequence[int], max_len: int = 256) -> list[int]:
    """Greedy decoding from BOS until EOS or max_len tokens; ties go to the
    smaller token id (argmax picks the first maximum)."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    src = np.asarray(source, dtype=np.int64)
    if src.size == 0:
        raise ValueError("source must be non-empty")
    c = params.E[src].mean(axis=0)
    h = np.tanh(params.W_c @ c + params.b_c)
    prev = BOS_ID
    out: list[int] = []
    for _ in range(max_len):
        h = np.tanh(params.W_h @ h + params.W_e @ params.E[prev] + params.b_h)
        nxt = int(np.argmax(params.W_o @ h + params.b_o))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        prev = nxt
    return out


# --- batched training path ------------------------------------------------
#
# Identical math to forward/backward above, vectorized across a ragged batch.
# Rows past a sample's true length receive zero dldp, which keeps every
# padded position out of all gradients (verified against the per-sample path
# in the test suite).


@dataclass
class BatchCache:
    sources: list[np.ndarray]
    inputs: np.ndarray   # (B, Tmax) teacher-forced inputs
    lengths: np.ndarray  # (B,) true step counts (target length + 1)
    c: np.ndarray        # (B, d)
    hs: np.ndarray       # (Tmax+1, B, h)
    probs: np.ndarray    # (B, Tmax, V)


def forward_batch(
    params: ModelParams,
    sources: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
) -> tuple[np.ndarray, BatchCache]:
    B = len(sources)
    if B == 0 or B != len(targets):
        raise ValueError("need equally many non-empty sources and targets")
    lengths = np.array([len(t) + 1 for t in targets], dtype=np.int64)
    Tmax = int(lengths.max())
    inputs = np.zeros((B, Tmax), dtype=np.int64)
    for b, tgt in enumerate(targets):
        inputs[b, 0] = BOS_ID
        inputs[b, 1 : len(tgt) + 1] = tgt
    srcs = [np.asarray(s, dtype=np.int64) for s in sources]
    if any(s.size == 0 for s in srcs):
        raise ValueError("source must be non-empty")
    c = np.stack([params.E[s].mean(axis=0) for s in srcs])
    hs = np.empty((Tmax + 1, B, params.h))
    probs = np.empty((B, Tmax, params.V))
    hs[0] = np.tanh(c @ params.W_c.T + params.b_c)
    for t in range(Tmax):
        x = params.E[inputs[:, t]]
        hs[t + 1] = np.tanh(hs[t] @ params.W_h.T + x @ params.W_e.T + params.b_h)
        probs[:, t, :] = softmax(hs[t + 1] @ params.W_o.T + params.b_o)
    return probs, BatchCache(sources=srcs, inputs=inputs, lengths=lengths, c=c, hs=hs, probs=probs)


def backward_batch(params: ModelParams, cache: BatchCache, dldp: np.ndarray) -> dict[str, np.ndarray]:
    """Mean-over-batch parameter gradients from per-row d(loss)/d(prob)."""
    probs = cache.probs
    if dldp.shape != probs.shape:
        raise ValueError(f"dldp shape {dldp.shape} does not match probs shape {probs.shape}")
    B, Tmax, V = probs.shape
    dz = probs * (dldp - np.sum(probs * dldp, axis=2, keepdims=True))
    grads = zero_grads(params)
    flat_dz = dz.reshape(B * Tmax, V)
    flat_h = cache.hs[1:].transpose(1, 0, 2).reshape(B * Tmax, params.h)
    grads["W_o"] = flat_dz.T @ flat_h
    grads["b_o"] = flat_dz.sum(axis=0)
    carry = np.zeros((B, params.h))
    for t in range(Tmax, 0, -1):
        g = dz[:, t - 1, :] @ params.W_o + carry
        a = g * (1.0 - cache.hs[t] ** 2)
        grads["W_h"] += a.T @ cache.hs[t - 1]
        x = params.E[cache.inputs[:, t - 1]]
        grads["W_e"] += a.T @ x
        grads["b_h"] += a.sum(axis=0)
        np.add.at(grads["E"], cache.inputs[:, t - 1], a @ params.W_e)
        carry = a @ params.W_h
    a0 = carry * (1.0 - cache.hs[0] ** 2)
    grads["W_c"] = a0.T @ cache.c
    grads["b_c"] = a0.sum(axis=0)
    dc = a0 @ params.W_c
    src_idx = np.concatenate(cache.sources)
    src_val = np.concatenate([np.repeat(dc[b : b + 1] / s.size, s.size, axis=0)
                              for b, s in enumerate(cache.sources)])
    np.add.at(grads["E"], src_idx, src_val)
    for name in grads:
        grads[name] /= B
    return grads


# --- optimizer --------------------------------------------------------------


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_optim(params: ModelParams) -> OptimState:
    return OptimState(m=zero_grads(params), v=zero_grads(params), step=0)


def adamw_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[ModelParams, OptimState]:
    """One AdamW update in place (decoupled weight decay, bias-corrected moments)."""
    state.step += 1
    t = state.step
    for name, p in params.as_dict().items():
        g = grads[name]
        if weight_decay:
            p -= lr * weight_decay * p
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ModelParams, step: int = 0) -> None:
    """JSON header line (shapes, dims, step) followed by little-endian float64 data."""
    header = {
        "V": params.V,
        "d": params.d,
        "h": params.h,
        "step": step,
        "fields": [[name, list(getattr(params, name).shape)] for name in PARAM_FIELDS],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for name in PARAM_FIELDS:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, int]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    arrays = {}
    offset = 0
    for name, shape in header["fields"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays[name] = arr.astype(np.float64)
        offset += count * 8
    return ModelParams(**arrays), int(header["step"])
