"""Gaussian-process examiner: UCB acquisition over observed (scenario, loss) pairs.

Inputs are normalized to the unit cube and losses standardized before
fitting, so the fixed kernel hyperparameters are meaningful across factor
spaces. The Cholesky factor of the kernel matrix is grown by rank-1 appends
(the factor does not depend on the observed values, only their locations);
a full refactorization with jitter escalation happens only when an append
fails. Acquisition maximization is stochastic multi-start with coordinate
golden-section refinement, i.e. an approximate argmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial.distance import cdist

from .core import ExaminerProtocolError, InvalidConfigError, ScenarioSpace
from .numerics import NumericsError, cholesky_append, cholesky_factor


@dataclass(frozen=True)
class KernelConfig:
    family: str = "matern52"  # or "rbf"
    length_scale: float = 0.2  # in normalized (unit cube) units
    signal_variance: float = 1.0
    noise_variance: float = 1e-6

    def __post_init__(self):
        if self.family not in ("matern52", "rbf"):
            raise InvalidConfigError(f"unknown kernel family {self.family!r}")
        if min(self.length_scale, self.signal_variance, self.noise_variance) <= 0:
            raise InvalidConfigError("kernel hyperparameters must be strictly positive")


@dataclass(frozen=True)
class UcbConfig:
    kappa: float = 2.576
    init_random: int = 2
    candidates: int = 1000
    refine_iters: int = 20
    refine_sweeps: int = 2

    def __post_init__(self):
        if self.kappa < 0 or self.init_random < 0 or self.candidates < 1:
            raise InvalidConfigError("invalid acquisition configuration")
        if self.refine_iters < 0 or self.refine_sweeps < 0:
            raise InvalidConfigError("refinement counts must be >= 0")


def kernel_matrix(cfg: KernelConfig, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Covariance between two sets of normalized points."""
    r = cdist(np.atleast_2d(A), np.atleast_2d(B)) / cfg.length_scale
    if cfg.family == "rbf":
        return cfg.signal_variance * np.exp(-0.5 * r**2)
    s = np.sqrt(5.0) * r
    return cfg.signal_variance * (1.0 + s + s**2 / 3.0) * np.exp(-s)


class GpState:
    """Observations, standardization stats, and the cached Cholesky factor."""

    def __init__(self, space: ScenarioSpace, kernel: KernelConfig = KernelConfig()):
        self.space = space
        self.kernel = kernel
        self.X = np.empty((0, space.dim))  # normalized scenarios
        self.y = np.empty(0)  # raw losses as observed
        self.mu = 0.0
        self.sigma = 1.0
        self.L = np.empty((0, 0))
        self.alpha = np.empty(0)
        self.jitter = 0.0

    @property
    def n(self) -> int:
        return len(self.y)

    def _standardize(self) -> None:
        self.mu = float(self.y.mean())
        sd = float(self.y.std())
        self.sigma = sd if sd > 1e-12 else 1.0

    def _refresh_alpha(self) -> None:
        y_std = (self.y - self.mu) / self.sigma
        self.alpha = scipy.linalg.cho_solve((self.L, True), y_std)

    def _full_refactor(self) -> None:
        K = kernel_matrix(self.kernel, self.X, self.X)
        K[np.diag_indices_from(K)] += self.kernel.noise_variance
        self.L, self.jitter = cholesky_factor(K, self.jitter)

    def observe(self, values: np.ndarray, loss: float) -> None:
        """Add one (scenario, loss) pair and refresh the posterior caches."""
        x = self.space.normalize(self.space.validate(values))
        self.X = np.vstack([self.X, x])
        self.y = np.append(self.y, float(loss))
        k_self = self.kernel.signal_variance + self.kernel.noise_variance + self.jitter
        k_new = (
            kernel_matrix(self.kernel, self.X[:-1], x[None, :]).ravel()
            if self.n > 1
            else np.empty(0)
        )
        L = cholesky_append(self.L, k_new, k_self)
        if L is None:
            self._full_refactor()
        else:
            self.L = L
        self._standardize()
        self._refresh_alpha()

    def predict_norm(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean/variance (de-standardized) at normalized points."""
        Xq = np.atleast_2d(Xq)
        prior_var = self.kernel.signal_variance
        if self.n == 0:
            m = np.zeros(len(Xq))
            return m, np.full(len(Xq), prior_var)
        Ks = kernel_matrix(self.kernel, self.X, Xq)
        mean_std = Ks.T @ self.alpha
        V = scipy.linalg.solve_triangular(self.L, Ks, lower=True)
        var_std = prior_var - np.sum(V**2, axis=0)
        if np.any(var_std < -1e-6 * prior_var):
            raise NumericsError("posterior variance went significantly negative")
        var_std = np.maximum(var_std, 0.0)
        return self.mu + self.sigma * mean_std, self.sigma**2 * var_std

    def predict(self, values: np.ndarray) -> tuple[float, float]:
        """Posterior mean/variance at a scenario in factor units."""
        m, v = self.predict_norm(self.space.normalize(np.asarray(values, dtype=float)))
        return float(m[0]), float(v[0])

    def log_marginal_likelihood(self) -> float:
        y_std = (self.y - self.mu) / self.sigma
        return float(
            -0.5 * y_std @ self.alpha
            - np.sum(np.log(np.diag(self.L)))
            - 0.5 * self.n * np.log(2 * np.pi)
        )

    def refit_hyperparameters(self) -> None:
        """Maximize the marginal likelihood over length scale and signal variance."""
        if self.n < 3:
            return

        def neg_lml(log_params):
            kernel = replace(
                self.kernel,
                length_scale=float(np.exp(log_params[0])),
                signal_variance=float(np.exp(log_params[1])),
            )
            K = kernel_matrix(kernel, self.X, self.X)
            K[np.diag_indices_from(K)] += kernel.noise_variance
            try:
                L, _ = cholesky_factor(K, self.jitter)
            except NumericsError:
                return 1e12
            y_std = (self.y - self.mu) / self.sigma
            a = scipy.linalg.cho_solve((L, True), y_std)
            return float(
                0.5 * y_std @ a + np.sum(np.log(np.diag(L))) + 0.5 * self.n * np.log(2 * np.pi)
            )

        x0 = np.log([self.kernel.length_scale, self.kernel.signal_variance])
        res = scipy.optimize.minimize(
            neg_lml,
            x0,
            method="L-BFGS-B",
            bounds=[(np.log(0.01), np.log(10.0)), (np.log(1e-4), np.log(1e2))],
        )
        if res.success and neg_lml(res.x) < neg_lml(x0):
            self.kernel = replace(
                self.kernel,
                length_scale=float(np.exp(res.x[0])),
                signal_variance=float(np.exp(res.x[1])),
            )
            self._full_refactor()
            self._refresh_alpha()

    def snapshot(self) -> list[dict]:
        """Observed set as JSON-ready records, scenarios in factor units."""
        return [
            {
                "scenario": [float(v) for v in self.space.denormalize(self.X[i])],
                "loss": float(self.y[i]),
            }
            for i in range(self.n)
        ]

    def save_snapshot(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.snapshot(), sort_keys=True))


def gp_predict(state: GpState, values: np.ndarray) -> tuple[float, float]:
    """Posterior (mean, variance) at a scenario; prior when nothing observed."""
    return state.predict(values)


def ucb(state: GpState, config: UcbConfig, values: np.ndarray) -> float:
    """Upper confidence bound: mean + kappa * posterior std."""
    m, v = state.predict(values)
    return m + config.kappa * np.sqrt(v)


def _ucb_norm(state: GpState, config: UcbConfig, Xq: np.ndarray) -> np.ndarray:
    m, v = state.predict_norm(Xq)
    return m + config.kappa * np.sqrt(v)


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def maximize_acquisition(
    state: GpState,
    config: UcbConfig,
    space: ScenarioSpace,
    rng: np.random.Generator,
) -> np.ndarray:
    """Approximate argmax of the acquisition over the space.

    Random multi-start (plus all observed points), then coordinate-wise
    golden-section refinement from the incumbent; the best point ever
    evaluated is returned, so refinement can only help.
    """
    d = space.dim
    cand = rng.random((config.candidates, d))
    if state.n:
        cand = np.vstack([cand, state.X])
    scores = _ucb_norm(state, config, cand)
    best_i = int(np.argmax(scores))
    x = cand[best_i].copy()
    best_score = float(scores[best_i])

    def point_score(xp):
        return float(_ucb_norm(state, config, xp[None, :])[0])

    for _ in range(config.refine_sweeps):
        for dim in range(d):
            a, b = 0.0, 1.0
            x1 = b - _GOLDEN * (b - a)
            x2 = a + _GOLDEN * (b - a)
            p = x.copy()
            p[dim] = x1
            f1 = point_score(p)
            p[dim] = x2
            f2 = point_score(p)
            for xi, fi in ((x1, f1), (x2, f2)):
                if fi > best_score:
                    best_score, x = fi, x.copy()
                    x[dim] = xi
            for _ in range(config.refine_iters):
                if f1 < f2:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + _GOLDEN * (b - a)
                    p = x.copy()
                    p[dim] = x2
                    f2 = point_score(p)
                    xi, fi = x2, f2
                else:
                    b, x2, f2 = x2, x1, f1
                    x1 = b - _GOLDEN * (b - a)
                    p = x.copy()
                    p[dim] = x1
                    f1 = point_score(p)
                    xi, fi = x1, f1
                if fi > best_score:
                    best_score, x = fi, x.copy()
                    x[dim] = xi
    return space.denormalize(x)


class BoExaminer:
    """Examiner interface around the GP: random warmup, then UCB argmax."""

    def __init__(
        self,
        space: ScenarioSpace,
        rng: np.random.Generator,
        kernel: KernelConfig = KernelConfig(),
        acquisition: UcbConfig = UcbConfig(),
        refit: bool = False,
    ):
        self.space = space
        self.rng = rng
        self.acquisition = acquisition
        self.refit = refit
        self.state = GpState(space, kernel)
        self.n_generated = 0
        self._pending: np.ndarray | None = None

    def generate(self) -> np.ndarray:
        if self._pending is not None:
            raise ExaminerProtocolError("generate() called twice without update()")
        if self.n_generated < self.acquisition.init_random:
            values = self.space.uniform(self.rng)
        else:
            values = maximize_acquisition(self.state, self.acquisition, self.space, self.rng)
        self.n_generated += 1
        self._pending = values
        return values

    def update(self, values: np.ndarray, loss: float) -> None:
        if self._pending is None:
            raise ExaminerProtocolError("update() without a preceding generate()")
        if not np.array_equal(np.asarray(values, dtype=float), self._pending):
            raise ExaminerProtocolError("update() got a scenario that was not generated")
        self._pending = None
        self.state.observe(values, loss)
        if self.refit:
            self.state.refit_hyperparameters()
