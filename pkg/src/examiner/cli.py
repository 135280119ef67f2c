"""Command-line entry points: train, examine, weakness-study, strength, report.

Configuration comes from a JSON file (--config); individual flags override
file values. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import InvalidConfigError
from .harness import (
    ExperimentConfig,
    TrainConfig,
    check_out_dir,
    examine_experiment,
    train_experiment,
    weakness_study,
    write_examination,
    write_manifest,
    write_training,
)
from .reports import (
    read_trace_file,
    write_curves_csv,
    write_per_class_csv,
    write_scenario_matrix_csv,
)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InvalidConfigError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InvalidConfigError(f"config file {path} is not valid JSON: {e}") from e


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", help="output directory (must exist)")


def _add_examine_flags(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--examiner", choices=("rl", "bo", "random"))
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=_int_list, help="comma-separated seed list")
    p.add_argument("--t-checkpoints", type=_int_list, help="e.g. 0,100,300,500")
    p.add_argument("--checkpoint", help="classifier checkpoint (shapes target)")
    p.add_argument("--landscape", help="benchmark landscape name or JSON path")
    p.add_argument("--workers", type=int)
    p.add_argument("--dump-images", action="store_true", default=None)
    p.add_argument("--snapshot-examiners", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="examiner", description="Worst-case model evaluation harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a shape classifier")
    _add_common(p)
    p.add_argument("--m", type=int, help="training images per instance")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", choices=("linear", "mlp"))
    p.add_argument(
        "--restrict",
        nargs=3,
        metavar=("FACTOR", "LOWER", "UPPER"),
        help="narrow one factor's training range",
    )

    for name in ("examine", "weakness-study", "strength"):
        p = sub.add_parser(name)
        _add_examine_flags(p)

    p = sub.add_parser("report", help="emit CSV bundles from trace files")
    p.add_argument("traces", nargs="+", help="trace JSONL files")
    p.add_argument("--out", required=True)
    p.add_argument("--direction", choices=("weakness", "strength"), default="weakness")
    return parser


def _resolve_examine_config(args: argparse.Namespace) -> ExperimentConfig:
    data = _load_config_file(args.config)
    if args.checkpoint:
        data["target"] = {"type": "shapes", "checkpoint": args.checkpoint}
    if args.landscape:
        key = "path" if args.landscape.endswith(".json") else "name"
        data["target"] = {"type": "landscape", key: args.landscape}
    if args.examiner:
        ex = data.get("examiner", {})
        if ex.get("kind") != args.examiner:
            ex = {}
        ex["kind"] = args.examiner
        data["examiner"] = ex
    if args.T is not None:
        data["T"] = args.T
    if args.seed is not None:
        data["seeds"] = args.seed
    if args.t_checkpoints is not None:
        data["t_checkpoints"] = args.t_checkpoints
    if args.workers is not None:
        data["workers"] = args.workers
    if args.dump_images is not None:
        data["dump_images"] = args.dump_images
    if args.snapshot_examiners is not None:
        data["snapshot_examiners"] = args.snapshot_examiners
    data.pop("out", None)
    if "target" not in data:
        raise InvalidConfigError("no target: give --checkpoint, --landscape, or a config file")
    if "examiner" not in data:
        raise InvalidConfigError("no examiner: give --examiner or a config file")
    return ExperimentConfig.from_dict(data)


def _cmd_train(args: argparse.Namespace) -> int:
    data = _load_config_file(args.config)
    data.pop("out", None)
    if args.m is not None:
        data["m"] = args.m
    if args.epochs is not None:
        data["epochs"] = args.epochs
    if args.seed is not None:
        data["seed"] = args.seed
    if args.arch is not None:
        data["arch"] = args.arch
    if args.restrict is not None:
        factor, lo, hi = args.restrict
        data["restrict"] = {"factor": factor, "lower": float(lo), "upper": float(hi)}
    config = TrainConfig.from_dict(data)
    out_dir = check_out_dir(args.out or _load_config_file(args.config).get("out"))
    clf, metrics = train_experiment(config)
    write_training(out_dir, config, clf, metrics)
    print(
        f"trained {config.arch} classifier: m={config.m}, epochs={config.epochs}, "
        f"train_acc={metrics['final_train_accuracy']:.3f}, "
        f"holdout_acc={metrics['holdout_accuracy']:.3f}"
    )
    print(f"wrote {out_dir / 'classifier.json'}")
    return 0


def _cmd_examine(args: argparse.Namespace, command: str) -> int:
    file_cfg = _load_config_file(args.config)
    config = _resolve_examine_config(args)
    if command == "strength":
        config = ExperimentConfig.from_dict({**config.to_dict(), "direction": "strength"})
    out_dir = check_out_dir(args.out or file_cfg.get("out"))
    if command == "weakness-study":
        cells, report = weakness_study(config)
    else:
        cells, report = examine_experiment(config)
    write_examination(out_dir, command, config, cells, report)
    m = report["metrics"]
    print(
        f"{command}: {report['n_cells']} cells, T={config.T}; "
        f"p_true final={m['final_p_true_mean']:.4f} best={m['best_p_true_mean']:.4f}"
    )
    if "recovery" in report:
        rec = report["recovery"]
        if rec.get("status") == "ok":
            print(f"recovery rate (last {rec['last_k']}): {rec['rate_mean']:.3f}")
        else:
            print("recovery rate: not-applicable (restriction covers the full range)")
    print(f"wrote {out_dir / 'report.json'}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    out_dir = check_out_dir(args.out)
    cells = []
    for path in args.traces:
        trace = read_trace_file(path, direction=args.direction)
        cells.append(
            {"instance": trace.instance_id, "seed": Path(path).stem, "trace": trace}
        )
    n_factors = cells[0]["trace"].scenarios.shape[1]
    names = tuple(f"factor_{i}" for i in range(n_factors))
    write_curves_csv(cells, out_dir / "curves.csv")
    write_per_class_csv(cells, out_dir / "per_class.csv")
    write_scenario_matrix_csv(cells, names, out_dir / "scenarios.csv")
    write_manifest(
        out_dir,
        "report",
        {"traces": [Path(p).name for p in args.traces], "direction": args.direction},
    )
    print(f"wrote CSV bundle for {len(cells)} traces to {out_dir}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command in ("examine", "weakness-study", "strength"):
            return _cmd_examine(args, args.command)
        if args.command == "report":
            return _cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except InvalidConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: cannot write: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
