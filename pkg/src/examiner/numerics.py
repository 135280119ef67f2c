"""Shared numerical kernels: softmax, Adam, Cholesky solves, RNG streams.

Everything here is pure and 64-bit. Linear algebra is delegated to
numpy/scipy; the jitter-escalation policy around the Cholesky is ours.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg


class NumericsError(RuntimeError):
    """A numerical operation failed beyond recovery (e.g. factorization)."""


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax along `axis`. Rejects non-finite input."""
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise ValueError("softmax of empty array")
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax input contains NaN or Inf")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class AdamState:
    """Adam moments and step counter for one flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def init(cls, n_params: int, learning_rate: float = 0.001) -> "AdamState":
        return cls(
            first_moment=np.zeros(n_params),
            second_moment=np.zeros(n_params),
            learning_rate=learning_rate,
        )


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update (descent on `grads`)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.first_moment.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grads**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


# Jitter escalation: start at 1e-6 * mean(diag), then two x10 retries.
_JITTER_RETRIES = 3


def cholesky_factor(K: np.ndarray, jitter: float = 0.0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K + jitter*I, escalating jitter on failure.

    Returns (L, jitter_used). Raises NumericsError once escalation is
    exhausted.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got shape {K.shape}")
    n = K.shape[0]
    base = 1e-6 * float(np.mean(np.diag(K))) if n else 0.0
    if base <= 0.0:
        base = 1e-12
    attempts = [jitter] + [base * 10**k for k in range(_JITTER_RETRIES)]
    for j in attempts:
        if j < jitter:
            continue
        try:
            L = np.linalg.cholesky(K + j * np.eye(n))
            return L, j
        except np.linalg.LinAlgError:
            continue
    raise NumericsError(
        f"Cholesky failed for {n}x{n} matrix after jitter escalation to "
        f"{attempts[-1]:.3e}"
    )


def cholesky_solve(K: np.ndarray, b: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Solve (K + jitter*I) x = b via Cholesky, with jitter escalation."""
    L, _ = cholesky_factor(K, jitter)
    return scipy.linalg.cho_solve((L, True), np.asarray(b, dtype=float))


def cholesky_append(
    L: np.ndarray, k_new: np.ndarray, k_self: float
) -> np.ndarray | None:
    """Extend a Cholesky factor by one row/column of the underlying matrix.

    `k_new` is the covariance of the new point against existing ones and
    `k_self` its self-covariance (diagonal term, jitter included). Returns
    the (n+1)x(n+1) factor, or None when the Schur complement is not
    positive (caller should refactorize with more jitter).
    """
    n = L.shape[0]
    if n == 0:
        if k_self <= 0:
            return None
        return np.array([[np.sqrt(k_self)]])
    l_row = scipy.linalg.solve_triangular(L, np.asarray(k_new, dtype=float), lower=True)
    d2 = k_self - float(l_row @ l_row)
    if d2 <= 0:
        return None
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = L
    out[n, :n] = l_row
    out[n, n] = np.sqrt(d2)
    return out


def _hash_id(value: int | str) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value)
    digest = hashlib.sha256(str(value).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng_stream(master_seed: int, *stream_ids: int | str) -> np.random.Generator:
    """A reproducible generator for (master seed, stream id...) pairs.

    Distinct id tuples give independent streams; the same tuple always
    gives the same stream. String ids are hashed stably (no interpreter
    hash randomization).
    """
    key = tuple(_hash_id(v) for v in stream_ids)
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))
