"""Small trainable softmax classifier over rendered shape images.

The target model under examination: multinomial logistic regression on the
1024 raw pixels (optionally through one tanh hidden layer), trained by
full-batch gradient descent on cross-entropy. Training is fully
deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import InvalidConfigError, ScenarioSpace
from .numerics import rng_stream, softmax
from .render import IMAGE_SIZE, SHAPE_CLASSES, ShapeInstance, render_batch, render_space

N_FEATURES = IMAGE_SIZE * IMAGE_SIZE
N_CLASSES = len(SHAPE_CLASSES)


@dataclass
class Classifier:
    """Softmax classifier; `arch` is "linear" or "mlp" (one tanh hidden layer)."""

    arch: str
    w_out: np.ndarray
    b_out: np.ndarray
    w_hidden: np.ndarray | None = None
    b_hidden: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def logits(self, X: np.ndarray) -> np.ndarray:
        # Fixed preprocessing: remove each image's mean intensity. This
        # conditions training well and makes the raw level a nuisance.
        X = np.atleast_2d(X).reshape(-1, N_FEATURES)
        X = X - X.mean(axis=1, keepdims=True)
        if self.arch == "mlp":
            X = np.tanh(X @ self.w_hidden.T + self.b_hidden)
        return X @ self.w_out.T + self.b_out

    def classify(self, image: np.ndarray) -> np.ndarray:
        """Probability vector over the shape classes for one image."""
        return softmax(self.logits(image)[0])

    def classify_batch(self, images: np.ndarray) -> np.ndarray:
        return softmax(self.logits(images), axis=1)

    def to_dict(self) -> dict:
        data = {
            "arch": self.arch,
            "classes": list(SHAPE_CLASSES),
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out.tolist(),
            "meta": self.meta,
        }
        if self.arch == "mlp":
            data["w_hidden"] = self.w_hidden.tolist()
            data["b_hidden"] = self.b_hidden.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Classifier":
        return cls(
            arch=data["arch"],
            w_out=np.asarray(data["w_out"], dtype=float),
            b_out=np.asarray(data["b_out"], dtype=float),
            w_hidden=np.asarray(data["w_hidden"], dtype=float) if "w_hidden" in data else None,
            b_hidden=np.asarray(data["b_hidden"], dtype=float) if "b_hidden" in data else None,
            meta=data.get("meta", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Classifier":
        return cls.from_dict(json.loads(Path(path).read_text()))


def restrict_training_space(
    space: ScenarioSpace, factor: str, new_lower: float, new_upper: float
) -> ScenarioSpace:
    """Narrow one factor for training only; examination keeps the full space."""
    return space.restrict(factor, new_lower, new_upper)


def train_classifier(
    instances: list[ShapeInstance],
    m: int,
    training_space: ScenarioSpace,
    epochs: int = 500,
    seed: int = 0,
    learning_rate: float = 3.0,
    arch: str = "linear",
    hidden_dim: int = 64,
    weight_decay: float = 0.0,
) -> tuple[Classifier, dict]:
    """Render m random views per instance and fit by full-batch gradient descent.

    Steps are backtracked whenever they would increase the objective, so the
    recorded loss curve is non-increasing. With weight_decay > 0 the
    objective adds an L2 penalty, which keeps the post-softmax outputs
    graded instead of saturating at 0/1. Deterministic: same seed, same
    weights.
    """
    if not instances:
        raise InvalidConfigError("need at least one training instance")
    if m < 1:
        raise InvalidConfigError(f"m must be >= 1, got {m}")
    if arch not in ("linear", "mlp"):
        raise InvalidConfigError(f"unknown arch {arch!r}")

    # Per-instance substreams, so the m views of an instance are the first m
    # of a fixed sequence: sweeps over m compare nested training sets.
    X_parts, labels = [], []
    for inst in instances:
        inst_rng = rng_stream(seed, "train-classifier", inst.instance_id)
        scen = training_space.uniform(inst_rng, m)
        X_parts.append(render_batch(inst, scen).reshape(m, N_FEATURES))
        labels.extend([inst.label] * m)
    X = np.vstack(X_parts)
    X = X - X.mean(axis=1, keepdims=True)
    y = np.array(labels)
    n = len(y)
    Y = np.zeros((n, N_CLASSES))
    Y[np.arange(n), y] = 1.0

    if arch == "mlp":
        init_rng = rng_stream(seed, "train-classifier", "init")
        w_hidden = init_rng.uniform(-0.05, 0.05, size=(hidden_dim, N_FEATURES))
        b_hidden = np.zeros(hidden_dim)
        w_out = init_rng.uniform(-0.05, 0.05, size=(N_CLASSES, hidden_dim))
    else:
        w_hidden = b_hidden = None
        w_out = np.zeros((N_CLASSES, N_FEATURES))
    b_out = np.zeros(N_CLASSES)

    def loss_and_grads(params):
        w_out, b_out, w_hidden, b_hidden = params
        H = np.tanh(X @ w_hidden.T + b_hidden) if arch == "mlp" else X
        logits = H @ w_out.T + b_out
        P = softmax(logits, axis=1)
        loss = -np.mean(np.log(P[np.arange(n), y] + 1e-300))
        if weight_decay:
            loss += 0.5 * weight_decay * sum(
                float(np.sum(p**2)) for p in params if p is not None
            )
        dlogits = (P - Y) / n
        gw_out = dlogits.T @ H
        gb_out = dlogits.sum(axis=0)
        if arch == "mlp":
            da = (dlogits @ w_out) * (1.0 - H**2)
            grads = (gw_out, gb_out, da.T @ X, da.sum(axis=0))
        else:
            grads = (gw_out, gb_out, None, None)
        if weight_decay:
            grads = tuple(
                g + weight_decay * p if g is not None else None
                for g, p in zip(grads, params)
            )
        return loss, grads

    # Backtracking step control: a step is only accepted if it does not
    # increase the objective, so the recorded curve is non-increasing.
    params = (w_out, b_out, w_hidden, b_hidden)
    step = learning_rate
    losses = np.empty(epochs)
    loss, grads = loss_and_grads(params)
    for epoch in range(epochs):
        losses[epoch] = loss
        for _ in range(40):
            trial = tuple(
                p - step * g if g is not None else None for p, g in zip(params, grads)
            )
            trial_loss, trial_grads = loss_and_grads(trial)
            if trial_loss <= loss:
                params, loss, grads = trial, trial_loss, trial_grads
                step = min(step * 1.2, learning_rate)
                break
            step *= 0.5
    w_out, b_out, w_hidden, b_hidden = params

    clf = Classifier(arch=arch, w_out=w_out, b_out=b_out, w_hidden=w_hidden, b_hidden=b_hidden)
    P = clf.classify_batch(X)  # mean removal is idempotent
    train_acc = float(np.mean(np.argmax(P, axis=1) == y))
    metrics = {
        "m": m,
        "epochs": epochs,
        "seed": seed,
        "learning_rate": learning_rate,
        "weight_decay": weight_decay,
        "arch": arch,
        "n_train": n,
        "final_train_accuracy": train_acc,
        "final_train_loss": float(losses[-1]),
        "loss_curve": losses.tolist(),
        "training_space": training_space.to_list(),
        "instances": [
            {"shape_class": i.shape_class, "base_size": i.base_size, "instance_id": i.instance_id}
            for i in instances
        ],
    }
    clf.meta = {k: v for k, v in metrics.items() if k != "loss_curve"}
    return clf, metrics


def loss_of(classifier: Classifier, instance: ShapeInstance, values: np.ndarray) -> float:
    """1 - P(true class): the examined loss, in [0, 1]."""
    from .render import render

    p = classifier.classify(render(instance, values))
    return float(1.0 - p[instance.label])


class ShapeTarget:
    """TargetQuery for one shape instance under a trained classifier."""

    def __init__(
        self,
        classifier: Classifier,
        instance: ShapeInstance,
        space: ScenarioSpace | None = None,
    ):
        self.classifier = classifier
        self.instance = instance
        self.space = space or render_space()
        self.instance_id = instance.instance_id

    def evaluate(self, values: np.ndarray) -> float:
        return loss_of(self.classifier, self.instance, values)

    def evaluate_detail(self, values: np.ndarray) -> tuple[float, bool]:
        from .render import render

        p = self.classifier.classify(render(self.instance, values))
        label = self.instance.label
        return float(1.0 - p[label]), bool(np.argmax(p) == label)

    def evaluate_batch(self, scenarios: np.ndarray) -> np.ndarray:
        images = render_batch(self.instance, scenarios)
        P = self.classifier.classify_batch(images)
        return 1.0 - P[:, self.instance.label]
