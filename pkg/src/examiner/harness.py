"""Experiment orchestration: configs, cell scheduling, artifacts, manifests.

A run is a grid of (instance, seed) cells. Each cell builds a fresh
examiner from the config with its own RNG stream, so cells are independent
and may run on worker threads without changing any result. Every run
directory gets a manifest with the resolved config and content hashes of
all inputs and outputs; re-running a manifest reproduces every byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bo import BoExaminer, KernelConfig, UcbConfig
from .classify import Classifier, ShapeTarget, train_classifier
from .core import (
    ExamTrace,
    InvalidConfigError,
    RandomExaminer,
    ScenarioSpace,
    run_examination,
    standard_metric,
)
from .landscapes import AnalyticLandscape, LandscapeTarget, benchmark_landscapes
from .numerics import rng_stream
from .render import (
    ShapeInstance,
    canonical_instances,
    render,
    render_space,
    training_instances,
    write_pgm,
)
from .reports import (
    build_report,
    recovery_rates,
    write_curves_csv,
    write_per_class_csv,
    write_scenario_matrix_csv,
    write_trace_file,
)
from .rl import RlConfig, RlExaminer

EXAMINER_KINDS = ("rl", "bo", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration of one examination run."""

    target: dict
    examiner: dict
    T: int = 100
    seeds: tuple[int, ...] = (0,)
    direction: str = "weakness"
    t_checkpoints: tuple[int, ...] | None = None
    n_standard: int = 100
    workers: int = 1
    dump_images: bool = False
    snapshot_examiners: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise InvalidConfigError(f"T must be >= 1, got {self.T}")
        if not self.seeds:
            raise InvalidConfigError("seeds must be non-empty")
        if self.direction not in ("weakness", "strength"):
            raise InvalidConfigError(f"unknown direction {self.direction!r}")
        if self.examiner.get("kind") not in EXAMINER_KINDS:
            raise InvalidConfigError(
                f"examiner kind must be one of {EXAMINER_KINDS}, got "
                f"{self.examiner.get('kind')!r}"
            )
        if self.workers < 1:
            raise InvalidConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "seeds" in data:
            data["seeds"] = tuple(int(s) for s in data["seeds"])
        if data.get("t_checkpoints") is not None:
            data["t_checkpoints"] = tuple(int(t) for t in data["t_checkpoints"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        if self.t_checkpoints is not None:
            d["t_checkpoints"] = list(self.t_checkpoints)
        return d


def load_targets(target_cfg: dict) -> list:
    """Instantiate the per-instance targets named by the config."""
    kind = target_cfg.get("type")
    if kind == "landscape":
        if "path" in target_cfg:
            scape = AnalyticLandscape.load(target_cfg["path"])
            return [LandscapeTarget(scape)]
        name = target_cfg.get("name", "three-bump")
        bank = benchmark_landscapes()
        if name == "all":
            return [LandscapeTarget(s) for s in bank.values()]
        if name not in bank:
            raise InvalidConfigError(f"unknown landscape {name!r}; have {sorted(bank)}")
        return [LandscapeTarget(bank[name])]
    if kind == "shapes":
        path = target_cfg.get("checkpoint")
        if not path or not Path(path).is_file():
            raise InvalidConfigError(f"classifier checkpoint not found: {path!r}")
        clf = Classifier.load(path)
        classes = target_cfg.get("classes")
        instances = canonical_instances()
        if classes:
            instances = tuple(i for i in instances if i.shape_class in classes)
            if len(instances) != len(classes):
                raise InvalidConfigError(f"unknown classes in {classes!r}")
        space = render_space()
        return [ShapeTarget(clf, inst, space) for inst in instances]
    raise InvalidConfigError(f"unknown target type {kind!r}")


def build_examiner(examiner_cfg: dict, space: ScenarioSpace, rng: np.random.Generator):
    cfg = dict(examiner_cfg)
    kind = cfg.pop("kind")
    if kind == "random":
        if cfg:
            raise InvalidConfigError(f"random examiner takes no options, got {sorted(cfg)}")
        return RandomExaminer(space, rng)
    if kind == "rl":
        if "factor_order" in cfg and cfg["factor_order"] is not None:
            cfg["factor_order"] = tuple(int(i) for i in cfg["factor_order"])
        try:
            return RlExaminer(space, RlConfig(**cfg), rng)
        except TypeError as e:
            raise InvalidConfigError(f"bad rl examiner options: {e}") from e
    if kind == "bo":
        kernel_keys = {f.name for f in dataclasses.fields(KernelConfig)}
        ucb_keys = {f.name for f in dataclasses.fields(UcbConfig)}
        refit = bool(cfg.pop("refit", False))
        kernel = KernelConfig(**{k: cfg.pop(k) for k in list(cfg) if k in kernel_keys})
        acq = UcbConfig(**{k: cfg.pop(k) for k in list(cfg) if k in ucb_keys})
        if cfg:
            raise InvalidConfigError(f"bad bo examiner options: {sorted(cfg)}")
        return BoExaminer(space, rng, kernel=kernel, acquisition=acq, refit=refit)
    raise InvalidConfigError(f"unknown examiner kind {kind!r}")


def run_cell(
    target, examiner_cfg: dict, seed: int, T: int, direction: str
) -> dict:
    """One (instance, seed) examination with its own derived RNG stream."""
    rng = rng_stream(seed, "examiner", target.instance_id)
    examiner = build_examiner(examiner_cfg, target.space, rng)
    trace = run_examination(
        target, examiner, T, direction=direction, instance_id=target.instance_id
    )
    return {
        "instance": target.instance_id,
        "seed": seed,
        "trace": trace,
        "examiner": examiner,
        "target": target,
    }


def run_examination_grid(targets: list, config: ExperimentConfig) -> list[dict]:
    """All (instance, seed) cells, in deterministic order."""
    jobs = [(t, s) for t in targets for s in config.seeds]

    def work(job):
        target, seed = job
        return run_cell(target, config.examiner, seed, config.T, config.direction)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(work, jobs))
    return [work(j) for j in jobs]


def standard_losses_by_instance(targets: list, config: ExperimentConfig) -> dict:
    """Mean uniform-scenario loss per instance (the T=0 column), seed-averaged."""
    out = {}
    for target in targets:
        vals = [
            standard_metric(target, config.n_standard, rng_stream(s, "standard", target.instance_id))
            for s in config.seeds
        ]
        out[target.instance_id] = float(np.mean(vals))
    return out


def examine_experiment(config: ExperimentConfig) -> tuple[list[dict], dict]:
    """Run the grid and build the report (no files written)."""
    targets = load_targets(config.target)
    cells = run_examination_grid(targets, config)
    needs_standard = config.t_checkpoints is not None and 0 in config.t_checkpoints
    standard = standard_losses_by_instance(targets, config) if needs_standard else None
    report = build_report(
        cells,
        config.direction,
        config.T,
        t_checkpoints=list(config.t_checkpoints) if config.t_checkpoints else None,
        standard_losses=standard,
        n_standard=config.n_standard if needs_standard else None,
    )
    if config.direction == "strength":
        report["final_scenarios"] = [
            {
                "instance": c["instance"],
                "seed": c["seed"],
                "final_scenario": [float(v) for v in c["trace"].scenarios[-1]],
                "best_scenario": [float(v) for v in c["trace"].argbest],
                "best_p_true": 1.0 - c["trace"].best_loss,
            }
            for c in cells
        ]
    return cells, report


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


def check_out_dir(out: str | None) -> Path:
    if not out:
        raise InvalidConfigError("an output directory is required (--out)")
    out_dir = Path(out)
    if not out_dir.is_dir():
        raise InvalidConfigError(f"cannot write: output directory {out} does not exist")
    return out_dir


def write_manifest(
    out_dir: Path, command: str, config: dict, inputs: dict[str, str] | None = None
) -> None:
    """Hash every artifact in the run directory; written last."""
    outputs = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[str(p.relative_to(out_dir))] = _sha256(p)
    _write_json(
        {
            "command": command,
            "config": config,
            "package_version": __version__,
            "inputs": inputs or {},
            "outputs": outputs,
        },
        out_dir / "manifest.json",
    )


def write_examination(
    out_dir: Path, command: str, config: ExperimentConfig, cells: list[dict], report: dict
) -> None:
    """Emit traces, report, CSVs, optional snapshots/images, then the manifest."""
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(exist_ok=True)
    for cell in cells:
        write_trace_file(
            cell["trace"], traces_dir / f"{cell['instance']}__seed{cell['seed']}.jsonl"
        )
    _write_json(report, out_dir / "report.json")
    factor_names = cells[0]["target"].space.names
    write_curves_csv(cells, out_dir / "curves.csv")
    write_per_class_csv(cells, out_dir / "per_class.csv")
    write_scenario_matrix_csv(cells, factor_names, out_dir / "scenarios.csv")

    if config.snapshot_examiners:
        snap_dir = out_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for cell in cells:
            stem = f"{cell['instance']}__seed{cell['seed']}"
            ex = cell["examiner"]
            if isinstance(ex, RlExaminer):
                ex.params.save(snap_dir / f"{stem}.policy.json")
            elif isinstance(ex, BoExaminer):
                ex.state.save_snapshot(snap_dir / f"{stem}.gp.json")
    if config.dump_images:
        img_dir = out_dir / "images"
        img_dir.mkdir(exist_ok=True)
        for cell in cells:
            target = cell["target"]
            if isinstance(target, ShapeTarget):
                stem = f"{cell['instance']}__seed{cell['seed']}"
                write_pgm(
                    render(target.instance, cell["trace"].argbest),
                    img_dir / f"{stem}.best.pgm",
                )
                write_pgm(
                    render(target.instance, cell["trace"].scenarios[-1]),
                    img_dir / f"{stem}.final.pgm",
                )

    inputs = {}
    if config.target.get("type") == "shapes":
        cp = Path(config.target["checkpoint"])
        inputs[cp.name] = _sha256(cp)
    elif "path" in config.target:
        lp = Path(config.target["path"])
        inputs[lp.name] = _sha256(lp)
    write_manifest(out_dir, command, config.to_dict(), inputs)


@dataclass(frozen=True)
class TrainConfig:
    """Configuration for training a shape classifier.

    The defaults define "the default shape classifier" used by the
    experiments: a 64-unit tanh network trained on a 12-instance-per-class
    population with m renders per instance and light weight decay (keeps
    post-softmax outputs graded).
    """

    m: int = 10
    epochs: int = 3000
    seed: int = 0
    learning_rate: float = 3.0
    weight_decay: float = 1e-3
    arch: str = "mlp"
    instances_per_class: int = 12
    restrict: dict | None = None  # {"factor", "lower", "upper"}
    holdout_n: int = 200
    holdout_seed: int = 4242

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def train_experiment(config: TrainConfig) -> tuple[Classifier, dict]:
    """Train on the (possibly restricted) rendering space; report metrics.

    Held-out accuracy is always measured on the full rendering space with a
    fixed seed, so classifiers trained with different m are comparable.
    """
    full_space = render_space()
    training_space = full_space
    if config.restrict is not None:
        r = config.restrict
        training_space = full_space.restrict(r["factor"], r["lower"], r["upper"])
    instances = training_instances(config.instances_per_class)
    clf, metrics = train_classifier(
        list(instances),
        m=config.m,
        training_space=training_space,
        epochs=config.epochs,
        seed=config.seed,
        learning_rate=config.learning_rate,
        arch=config.arch,
        weight_decay=config.weight_decay,
    )
    eval_rng = rng_stream(config.holdout_seed, "holdout")
    correct = 0
    total = 0
    for inst in instances:
        scen = full_space.uniform(eval_rng, config.holdout_n)
        target = ShapeTarget(clf, inst, full_space)
        losses = target.evaluate_batch(scen)
        # p_true > 0.5 guarantees argmax correctness only; use full argmax.
        from .render import render_batch

        P = clf.classify_batch(render_batch(inst, scen))
        correct += int(np.sum(np.argmax(P, axis=1) == inst.label))
        total += len(scen)
        metrics.setdefault("holdout_mean_p_true", {})[inst.shape_class] = float(
            np.mean(1.0 - losses)
        )
    metrics["holdout_accuracy"] = correct / total
    metrics["restriction"] = config.restrict
    clf.meta["restriction"] = config.restrict
    clf.meta["holdout_accuracy"] = metrics["holdout_accuracy"]
    return clf, metrics


def write_training(out_dir: Path, config: TrainConfig, clf: Classifier, metrics: dict) -> None:
    clf.save(out_dir / "classifier.json")
    _write_json(metrics, out_dir / "train_metrics.json")
    write_manifest(out_dir, "train", dataclasses.asdict(config))


def weakness_study(config: ExperimentConfig) -> tuple[list[dict], dict]:
    """Examination plus recovery-rate analysis of the restricted factor."""
    targets = load_targets(config.target)
    if config.target.get("type") != "shapes":
        raise InvalidConfigError("weakness study needs a shapes target")
    clf: Classifier = targets[0].classifier
    restriction = clf.meta.get("restriction")
    if restriction is None:
        raise InvalidConfigError(
            "checkpoint carries no training restriction; train with --restrict first"
        )
    cells, report = examine_experiment(config)
    space = targets[0].space
    idx = space.index_of(restriction["factor"])
    factor = space.factors[idx]
    if restriction["lower"] <= factor.lower and restriction["upper"] >= factor.upper:
        report["recovery"] = {"status": "not-applicable", "restriction": restriction}
    else:
        rec = recovery_rates(cells, idx, restriction["lower"], restriction["upper"])
        lo = max(restriction["lower"], factor.lower)
        hi = min(restriction["upper"], factor.upper)
        rec["excluded_volume_fraction"] = 1.0 - (hi - lo) / factor.width
        rec["restriction"] = restriction
        rec["status"] = "ok"
        report["recovery"] = rec
    return cells, report
