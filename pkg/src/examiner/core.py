"""Factor spaces, the sequential examination loop, and evaluation metrics.

A scenario is a point in the Cartesian product of bounded factors. An
examiner proposes scenarios one at a time, observes the target's loss for
each, and adapts. The loop here is examiner-agnostic; direction handling
(weakness vs. strength) is done once, by negating the loss fed back to the
examiner, so examiners are always maximizers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol, runtime_checkable

import numpy as np


class InvalidConfigError(ValueError):
    """A precondition on configuration was violated."""


class ScenarioBoundsError(RuntimeError):
    """An examiner emitted a scenario outside the factor space. Never clamped."""


class ExaminerProtocolError(RuntimeError):
    """generate/update were not called in strict alternation."""


@dataclass(frozen=True)
class Factor:
    """One bounded factor, with a discretization count for grid-based samplers."""

    name: str
    lower: float
    upper: float
    bins: int = 100

    def __post_init__(self):
        if not np.isfinite(self.lower) or not np.isfinite(self.upper):
            raise InvalidConfigError(f"factor {self.name!r}: bounds must be finite")
        if not self.lower < self.upper:
            raise InvalidConfigError(
                f"factor {self.name!r}: lower ({self.lower}) must be < upper ({self.upper})"
            )
        if self.bins < 2:
            raise InvalidConfigError(f"factor {self.name!r}: bins must be >= 2")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def bin_value(self, index: int) -> float:
        """Value of bin `index` on the endpoint-inclusive even grid."""
        if not 0 <= index < self.bins:
            raise IndexError(f"bin index {index} out of range [0, {self.bins})")
        # Two-sided interpolation so both endpoints are hit exactly in floating point.
        t = index / (self.bins - 1)
        return (1.0 - t) * self.lower + t * self.upper


def bin_to_value(factor: Factor, index: int) -> float:
    """Map a discrete choice to its factor value (endpoints inclusive)."""
    return factor.bin_value(index)


@dataclass(frozen=True)
class ScenarioSpace:
    """An ordered, named collection of factors. Order is the sampling order."""

    factors: tuple[Factor, ...]

    def __post_init__(self):
        if isinstance(self.factors, list):
            object.__setattr__(self, "factors", tuple(self.factors))
        if len(self.factors) == 0:
            raise InvalidConfigError("scenario space must have at least one factor")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise InvalidConfigError(f"duplicate factor names: {names}")

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @property
    def lowers(self) -> np.ndarray:
        return np.array([f.lower for f in self.factors])

    @property
    def uppers(self) -> np.ndarray:
        return np.array([f.upper for f in self.factors])

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no factor named {name!r}") from None

    def contains(self, values: np.ndarray) -> bool:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.dim,):
            return False
        return bool(np.all(values >= self.lowers) and np.all(values <= self.uppers))

    def validate(self, values: np.ndarray) -> np.ndarray:
        """Return `values` as a float vector, or raise ScenarioBoundsError."""
        values = np.asarray(values, dtype=float)
        if not self.contains(values):
            raise ScenarioBoundsError(
                f"scenario {values!r} outside bounds of space {self.names}"
            )
        return values

    def normalize(self, values: np.ndarray) -> np.ndarray:
        """Map factor units to the unit cube."""
        values = np.asarray(values, dtype=float)
        return (values - self.lowers) / (self.uppers - self.lowers)

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        """Map unit-cube coordinates back to factor units (endpoints exact)."""
        unit = np.asarray(unit, dtype=float)
        return (1.0 - unit) * self.lowers + unit * self.uppers

    def uniform(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw scenarios uniformly, each factor independent on its range."""
        if n is None:
            return self.denormalize(rng.random(self.dim))
        return self.denormalize(rng.random((n, self.dim)))

    def restrict(self, name: str, new_lower: float, new_upper: float) -> "ScenarioSpace":
        """Narrow one factor's range. The new range must lie within the old."""
        i = self.index_of(name)
        f = self.factors[i]
        if not (f.lower <= new_lower < new_upper <= f.upper):
            raise InvalidConfigError(
                f"range [{new_lower}, {new_upper}] is not a subrange of "
                f"[{f.lower}, {f.upper}] for factor {name!r}"
            )
        factors = list(self.factors)
        factors[i] = replace(f, lower=float(new_lower), upper=float(new_upper))
        return ScenarioSpace(tuple(factors))

    def to_list(self) -> list[dict]:
        return [
            {"name": f.name, "lower": f.lower, "upper": f.upper, "bins": f.bins}
            for f in self.factors
        ]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "ScenarioSpace":
        factors = tuple(
            Factor(
                name=d["name"],
                lower=float(d["lower"]),
                upper=float(d["upper"]),
                bins=int(d.get("bins", 100)),
            )
            for d in items
        )
        return cls(factors)

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioSpace":
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = data["factors"]
        return cls.from_list(data)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_list(), indent=2) + "\n")


@runtime_checkable
class TargetQuery(Protocol):
    """A black-box target: deterministic scenario -> loss, plus its space."""

    space: ScenarioSpace

    def evaluate(self, values: np.ndarray) -> float: ...


@runtime_checkable
class Examiner(Protocol):
    """Sequential proposer. generate() and update() strictly alternate."""

    def generate(self) -> np.ndarray: ...

    def update(self, values: np.ndarray, loss: float) -> None: ...


class RandomExaminer:
    """Uniform-random baseline examiner (ignores all feedback)."""

    def __init__(self, space: ScenarioSpace, rng: np.random.Generator):
        self.space = space
        self.rng = rng
        self._pending = False

    def generate(self) -> np.ndarray:
        if self._pending:
            raise ExaminerProtocolError("generate() called twice without update()")
        self._pending = True
        return self.space.uniform(self.rng)

    def update(self, values: np.ndarray, loss: float) -> None:
        if not self._pending:
            raise ExaminerProtocolError("update() without a preceding generate()")
        self._pending = False


@dataclass
class ExamTrace:
    """Full history of one examination: T scenarios with their raw losses.

    `best_loss` is the worst case found under weakness direction (max loss)
    or the best case under strength direction (min loss). `final_loss` is the
    last iterate, which is what the sequential procedure literally returns.
    """

    instance_id: str
    scenarios: np.ndarray  # (T, d)
    losses: np.ndarray  # (T,)
    direction: str = "weakness"
    correct: np.ndarray | None = None  # optional per-step correctness flags

    def __post_init__(self):
        self.scenarios = np.asarray(self.scenarios, dtype=float)
        self.losses = np.asarray(self.losses, dtype=float)
        if self.scenarios.ndim != 2 or len(self.losses) != len(self.scenarios):
            raise InvalidConfigError("trace scenarios/losses shape mismatch")
        if self.direction not in ("weakness", "strength"):
            raise InvalidConfigError(f"unknown direction {self.direction!r}")

    def __len__(self) -> int:
        return len(self.losses)

    @property
    def steps(self) -> list[tuple[int, np.ndarray, float]]:
        return [
            (t + 1, self.scenarios[t], float(self.losses[t]))
            for t in range(len(self))
        ]

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])

    @property
    def best_index(self) -> int:
        if self.direction == "weakness":
            return int(np.argmax(self.losses))
        return int(np.argmin(self.losses))

    @property
    def best_loss(self) -> float:
        return float(self.losses[self.best_index])

    @property
    def argbest(self) -> np.ndarray:
        return self.scenarios[self.best_index]

    def best_so_far(self) -> np.ndarray:
        """Running best loss per step (monotone by construction)."""
        if self.direction == "weakness":
            return np.maximum.accumulate(self.losses)
        return np.minimum.accumulate(self.losses)

    def prefix(self, t: int) -> "ExamTrace":
        """The trace truncated to its first t steps."""
        if not 1 <= t <= len(self):
            raise InvalidConfigError(f"prefix length {t} outside [1, {len(self)}]")
        return ExamTrace(
            instance_id=self.instance_id,
            scenarios=self.scenarios[:t].copy(),
            losses=self.losses[:t].copy(),
            direction=self.direction,
            correct=None if self.correct is None else self.correct[:t].copy(),
        )

    def to_jsonl(self) -> str:
        lines = []
        for t in range(len(self)):
            rec = {
                "instance": self.instance_id,
                "t": t + 1,
                "scenario": [float(v) for v in self.scenarios[t]],
                "loss": float(self.losses[t]),
            }
            if self.correct is not None:
                rec["correct"] = bool(self.correct[t])
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, direction: str = "weakness") -> "ExamTrace":
        scenarios, losses, corrects = [], [], []
        instance = None
        have_correct = True
        for lineno, line in enumerate(text.strip().splitlines(), start=1):
            try:
                rec = json.loads(line)
                instance = rec["instance"] if instance is None else instance
                if rec["instance"] != instance:
                    raise ValueError("mixed instance ids in one trace")
                if rec["t"] != lineno:
                    raise ValueError(f"expected t={lineno}, got {rec['t']}")
                scenarios.append(rec["scenario"])
                losses.append(rec["loss"])
                if "correct" in rec:
                    corrects.append(bool(rec["correct"]))
                else:
                    have_correct = False
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise ValueError(f"corrupt trace line {lineno}: {e}") from e
        if not losses:
            raise ValueError("empty trace")
        return cls(
            instance_id=instance,
            scenarios=np.array(scenarios, dtype=float),
            losses=np.array(losses, dtype=float),
            direction=direction,
            correct=np.array(corrects, dtype=bool) if have_correct and corrects else None,
        )


def run_examination(
    target: TargetQuery,
    examiner: Examiner,
    T: int,
    *,
    direction: str = "weakness",
    instance_id: str = "instance",
) -> ExamTrace:
    """Run the sequential examination loop for T steps.

    Each step: the examiner proposes a scenario, the target is evaluated on
    it, and the examiner is told the result. Under strength direction the
    loss is negated before the examiner sees it, so examiners always
    maximize. Scenarios outside the target's space are a hard error.
    """
    if T < 1:
        raise InvalidConfigError(f"T must be >= 1, got {T}")
    if direction not in ("weakness", "strength"):
        raise InvalidConfigError(f"unknown direction {direction!r}")
    sign = 1.0 if direction == "weakness" else -1.0
    space = target.space
    detail = getattr(target, "evaluate_detail", None)

    scenarios = np.empty((T, space.dim))
    losses = np.empty(T)
    corrects = np.empty(T, dtype=bool) if detail is not None else None
    for t in range(T):
        values = space.validate(examiner.generate())
        if detail is not None:
            loss, corrects[t] = detail(values)
        else:
            loss = target.evaluate(values)
        loss = float(loss)
        scenarios[t] = values
        losses[t] = loss
        examiner.update(values, sign * loss)
    return ExamTrace(
        instance_id=instance_id,
        scenarios=scenarios,
        losses=losses,
        direction=direction,
        correct=corrects,
    )


def examiner_metric(traces: list[ExamTrace], mode: str = "best") -> float:
    """Mean over traces of per-trace loss: last iterate or best-so-far.

    mode="final" is the literal return of the sequential procedure;
    mode="best" is the worst-case (direction-aware extremum) reading.
    """
    if not traces:
        raise InvalidConfigError("examiner_metric needs at least one trace")
    if mode == "final":
        return float(np.mean([tr.final_loss for tr in traces]))
    if mode == "best":
        return float(np.mean([tr.best_loss for tr in traces]))
    raise InvalidConfigError(f"unknown mode {mode!r}")


def standard_metric(
    target: TargetQuery, N: int, rng_seed: int | np.random.Generator
) -> float:
    """Average-case protocol: mean loss over N uniform-random scenarios."""
    if N < 1:
        raise InvalidConfigError(f"N must be >= 1, got {N}")
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    batch = getattr(target, "evaluate_batch", None)
    samples = target.space.uniform(rng, N)
    if batch is not None:
        return float(np.mean(batch(samples)))
    return float(np.mean([target.evaluate(s) for s in samples]))
