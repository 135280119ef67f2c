"""Policy-based examiner: an LSTM samples one discretized factor per step.

The policy factorizes the scenario distribution across factors: step c
produces a categorical distribution over factor c's bins, the sampled bin's
embedding feeds step c+1. Training is REINFORCE on the observed losses,
buffered into batches, with gradients backpropagated through time by hand
(no autodiff). The BPTT gradient is checked against finite differences in
the test suite; that check is the module's anchor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit as sigmoid

from .core import (
    ExaminerProtocolError,
    InvalidConfigError,
    ScenarioSpace,
)
from .numerics import AdamState, adam_step, softmax


@dataclass(frozen=True)
class RlConfig:
    """Hyperparameters of the policy examiner."""

    embed_dim: int = 30
    hidden_dim: int = 30
    learning_rate: float = 0.001
    batch_size: int = 32
    baseline: str = "batch-mean"  # or "none" for the plain estimator
    factor_order: tuple[int, ...] | None = None  # sampling order; None = identity
    init_scale: float = 0.08

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.batch_size < 1:
            raise InvalidConfigError("dimensions and batch size must be positive")
        if self.baseline not in ("batch-mean", "none"):
            raise InvalidConfigError(f"unknown baseline {self.baseline!r}")


def permute_factor_order(config: RlConfig, order: tuple[int, ...] | list[int]) -> RlConfig:
    """Return a config that samples factors in the given order.

    Emitted scenarios stay in canonical space order regardless.
    """
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(len(order))):
        raise InvalidConfigError(f"{order!r} is not a permutation of 0..{len(order) - 1}")
    return replace(config, factor_order=order)


@dataclass
class Rollout:
    """One sampled scenario: bin choices, their log-probs, and the reward."""

    bin_indices: np.ndarray  # (C,) canonical factor order
    log_probs: np.ndarray  # (C,) canonical factor order
    reward: float | None = None

    @property
    def total_log_prob(self) -> float:
        return float(np.sum(self.log_probs))


class PolicyParams:
    """All learnable tensors, stored as views into one flat vector.

    The flat layout makes the Adam update and finite-difference probing
    trivial: both operate on `theta` directly.
    """

    def __init__(
        self,
        embed_dim: int,
        hidden_dim: int,
        factor_names: tuple[str, ...],
        factor_bins: tuple[int, ...],
        theta: np.ndarray,
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.factor_names = factor_names
        self.factor_bins = factor_bins
        self.layout: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in self._shapes(embed_dim, hidden_dim, factor_names, factor_bins):
            size = int(np.prod(shape))
            self.layout[name] = (offset, shape)
            offset += size
        if theta.shape != (offset,):
            raise InvalidConfigError(f"theta has {theta.shape}, layout needs ({offset},)")
        self.theta = theta

    @staticmethod
    def _shapes(embed_dim, hidden_dim, factor_names, factor_bins):
        E, H = embed_dim, hidden_dim
        yield "lstm_w", (E + H, 4 * H)
        yield "lstm_b", (4 * H,)
        yield "h0", (H,)
        yield "c0", (H,)
        for name, bins in zip(factor_names, factor_bins):
            yield f"emb_{name}", (bins, E)
        for name, bins in zip(factor_names, factor_bins):
            yield f"head_w_{name}", (H, bins)
        for name, bins in zip(factor_names, factor_bins):
            yield f"head_b_{name}", (bins,)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return self.theta[offset : offset + int(np.prod(shape))].reshape(shape)

    def with_theta(self, theta: np.ndarray) -> "PolicyParams":
        return PolicyParams(
            self.embed_dim, self.hidden_dim, self.factor_names, self.factor_bins, theta
        )

    @classmethod
    def init(
        cls, space: ScenarioSpace, config: RlConfig, rng: np.random.Generator
    ) -> "PolicyParams":
        """Uniform [-init_scale, init_scale] weights; zero biases and states."""
        names = space.names
        bins = tuple(f.bins for f in space.factors)
        total = sum(
            int(np.prod(shape))
            for _, shape in cls._shapes(config.embed_dim, config.hidden_dim, names, bins)
        )
        theta = np.zeros(total)
        params = cls(config.embed_dim, config.hidden_dim, names, bins, theta)
        s = config.init_scale
        for name in params.layout:
            if name.startswith(("lstm_w", "emb_", "head_w_")):
                v = params.view(name)
                v[...] = rng.uniform(-s, s, size=v.shape)
        return params

    def to_checkpoint(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "factor_names": list(self.factor_names),
            "factor_bins": list(self.factor_bins),
            "tensors": {name: self.view(name).tolist() for name in self.layout},
        }

    @classmethod
    def from_checkpoint(cls, data: dict) -> "PolicyParams":
        names = tuple(data["factor_names"])
        bins = tuple(int(b) for b in data["factor_bins"])
        total = sum(
            int(np.prod(shape))
            for _, shape in cls._shapes(data["embed_dim"], data["hidden_dim"], names, bins)
        )
        params = cls(data["embed_dim"], data["hidden_dim"], names, bins, np.zeros(total))
        for name, values in data["tensors"].items():
            params.view(name)[...] = np.asarray(values, dtype=float)
        return params

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_checkpoint(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParams":
        return cls.from_checkpoint(json.loads(Path(path).read_text()))


def _resolve_order(space: ScenarioSpace, config: RlConfig) -> tuple[int, ...]:
    order = config.factor_order or tuple(range(space.dim))
    if sorted(order) != list(range(space.dim)):
        raise InvalidConfigError(f"factor order {order!r} does not match space dim {space.dim}")
    return tuple(order)


def _lstm_forward_step(params: PolicyParams, x, h, c):
    """One LSTM step; returns new state plus the caches BPTT needs."""
    H = params.hidden_dim
    z = np.concatenate([x, h], axis=-1)
    a = z @ params.view("lstm_w") + params.view("lstm_b")
    gi = sigmoid(a[..., 0 * H : 1 * H])
    gf = sigmoid(a[..., 1 * H : 2 * H])
    gg = np.tanh(a[..., 2 * H : 3 * H])
    go = sigmoid(a[..., 3 * H : 4 * H])
    c_new = gf * c + gi * gg
    h_new = go * np.tanh(c_new)
    return z, gi, gf, gg, go, c_new, h_new


def sample_scenario(
    params: PolicyParams,
    space: ScenarioSpace,
    config: RlConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, Rollout]:
    """Draw one scenario from the factorized policy.

    The first step sees a fixed zero input and the learnable initial state.
    Rollout indices and log-probs are stored in canonical factor order.
    """
    order = _resolve_order(space, config)
    C = space.dim
    indices = np.zeros(C, dtype=int)
    log_probs = np.zeros(C)
    x = np.zeros(params.embed_dim)
    h, c = params.view("h0").copy(), params.view("c0").copy()
    for step in range(C):
        f = order[step]
        name = space.factors[f].name
        *_, c, h = _lstm_forward_step(params, x, h, c)
        logits = h @ params.view(f"head_w_{name}") + params.view(f"head_b_{name}")
        shifted = logits - np.max(logits)
        logp_all = shifted - np.log(np.sum(np.exp(shifted)))
        idx = int(rng.choice(len(logits), p=np.exp(logp_all)))
        indices[f] = idx
        log_probs[f] = logp_all[idx]
        x = params.view(f"emb_{name}")[idx]
    values = np.array(
        [space.factors[f].bin_value(indices[f]) for f in range(C)]
    )
    return values, Rollout(bin_indices=indices, log_probs=log_probs)


def reinforce_objective_grad(
    params: PolicyParams,
    space: ScenarioSpace,
    config: RlConfig,
    indices: np.ndarray,
    weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Weighted log-likelihood of sampled bins, and its gradient.

    J(theta) = sum_b weights[b] * sum_c log P(bin_{b,c} | earlier bins).
    The forward pass is recomputed for the whole batch, then reversed with
    hand-derived LSTM backprop. Returns (J, dJ/dtheta) with dJ flat in the
    same layout as params.theta.
    """
    order = _resolve_order(space, config)
    B, C = indices.shape
    E, H = params.embed_dim, params.hidden_dim
    weights = np.asarray(weights, dtype=float)

    # Forward, caching per-step activations.
    x = np.zeros((B, E))
    h = np.tile(params.view("h0"), (B, 1))
    c = np.tile(params.view("c0"), (B, 1))
    caches = []
    J = 0.0
    for step in range(C):
        f = order[step]
        name = space.factors[f].name
        z, gi, gf, gg, go, c_new, h_new = _lstm_forward_step(params, x, h, c)
        logits = h_new @ params.view(f"head_w_{name}") + params.view(f"head_b_{name}")
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        logp_all = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        p = np.exp(logp_all)
        idx = indices[:, f]
        J += float(weights @ logp_all[np.arange(B), idx])
        caches.append((f, name, z, gi, gf, gg, go, c, c_new, h_new, p, idx))
        h, c = h_new, c_new
        x = params.view(f"emb_{name}")[idx]

    grad = np.zeros_like(params.theta)
    gview = PolicyParams(E, H, params.factor_names, params.factor_bins, grad).view

    dh_carry = np.zeros((B, H))
    dc_carry = np.zeros((B, H))
    for step in reversed(range(C)):
        f, name, z, gi, gf, gg, go, c_prev, c_new, h_new, p, idx = caches[step]
        K = p.shape[1]
        # Head: d/dlogits of sum_b w_b * logp_b[idx_b] is w * (onehot - p).
        dlogits = -p * weights[:, None]
        dlogits[np.arange(B), idx] += weights
        gview(f"head_w_{name}")[...] += h_new.T @ dlogits
        gview(f"head_b_{name}")[...] += dlogits.sum(axis=0)
        dh = dh_carry + dlogits @ params.view(f"head_w_{name}").T

        tc = np.tanh(c_new)
        do = dh * tc
        dc = dc_carry + dh * go * (1.0 - tc**2)
        di = dc * gg
        df = dc * c_prev
        dg = dc * gi
        da = np.concatenate(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                dg * (1.0 - gg**2),
                do * go * (1.0 - go),
            ],
            axis=1,
        )
        gview("lstm_w")[...] += z.T @ da
        gview("lstm_b")[...] += da.sum(axis=0)
        dz = da @ params.view("lstm_w").T
        dx = dz[:, :E]
        dh_carry = dz[:, E:]
        dc_carry = dc * gf
        if step > 0:
            prev_f = order[step - 1]
            prev_name = space.factors[prev_f].name
            np.add.at(gview(f"emb_{prev_name}"), caches[step - 1][11], dx)
        else:
            gview("h0")[...] += dh_carry.sum(axis=0)
            gview("c0")[...] += dc_carry.sum(axis=0)
    return J, grad


def policy_gradient_update(
    params: PolicyParams,
    space: ScenarioSpace,
    config: RlConfig,
    batch: list[Rollout],
    adam: AdamState,
) -> tuple[PolicyParams, AdamState]:
    """One REINFORCE step on a full batch of rollouts (ascent on reward)."""
    if len(batch) != config.batch_size:
        raise InvalidConfigError(
            f"batch has {len(batch)} rollouts, config says {config.batch_size}"
        )
    rewards = np.array([r.reward for r in batch], dtype=float)
    if np.any(np.isnan(rewards)):
        raise InvalidConfigError("rollout without a reward in the batch")
    baseline = rewards.mean() if config.baseline == "batch-mean" else 0.0
    weights = (rewards - baseline) / len(batch)
    indices = np.stack([r.bin_indices for r in batch])
    _, grad = reinforce_objective_grad(params, space, config, indices, weights)
    new_theta, new_adam = adam_step(params.theta, -grad, adam)
    return params.with_theta(new_theta), new_adam


class RlExaminer:
    """Examiner interface around the policy: buffered REINFORCE training.

    Rewards accumulate in a buffer; every `batch_size` observed losses
    trigger exactly one parameter update.
    """

    def __init__(
        self,
        space: ScenarioSpace,
        config: RlConfig,
        rng: np.random.Generator,
    ):
        self.space = space
        self.config = config
        self.rng = rng
        _resolve_order(space, config)
        self.params = PolicyParams.init(space, config, rng)
        self.adam = AdamState.init(self.params.n_params, config.learning_rate)
        self.buffer: list[Rollout] = []
        self.n_updates = 0
        self._pending: tuple[np.ndarray, Rollout] | None = None

    def generate(self) -> np.ndarray:
        if self._pending is not None:
            raise ExaminerProtocolError("generate() called twice without update()")
        values, rollout = sample_scenario(self.params, self.space, self.config, self.rng)
        self._pending = (values, rollout)
        return values

    def update(self, values: np.ndarray, loss: float) -> None:
        if self._pending is None:
            raise ExaminerProtocolError("update() without a preceding generate()")
        pending_values, rollout = self._pending
        if not np.array_equal(np.asarray(values, dtype=float), pending_values):
            raise ExaminerProtocolError("update() got a scenario that was not generated")
        self._pending = None
        rollout.reward = float(loss)
        self.buffer.append(rollout)
        if len(self.buffer) == self.config.batch_size:
            self.params, self.adam = policy_gradient_update(
                self.params, self.space, self.config, self.buffer, self.adam
            )
            self.buffer = []
            self.n_updates += 1
