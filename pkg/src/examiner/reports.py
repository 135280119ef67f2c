"""Report assembly and CSV emission from examination traces.

Everything here is a pure function of the traces, so every aggregate in a
report can be recomputed from the trace files it cites. All output is
byte-stable: floats are written with repr (shortest round-trip) and JSON
keys are sorted.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ExamTrace, InvalidConfigError

LAST_K = 50  # scenario-matrix dump length, from the end of each trace


def _f(x: float) -> str:
    return repr(float(x))


def read_trace_file(path: str | Path, direction: str = "weakness") -> ExamTrace:
    path = Path(path)
    try:
        return ExamTrace.from_jsonl(path.read_text(), direction=direction)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e


def write_trace_file(trace: ExamTrace, path: str | Path) -> None:
    Path(path).write_text(trace.to_jsonl())


def build_report(
    cells: list[dict],
    direction: str,
    T: int,
    t_checkpoints: list[int] | None = None,
    standard_losses: dict | None = None,
    n_standard: int | None = None,
) -> dict:
    """Aggregate per-cell traces into the report structure.

    `cells` entries carry instance, seed, and trace. p_true is reported as
    1 - loss throughout (exact for shape targets, nominal for landscapes).
    """
    if not cells:
        raise InvalidConfigError("no cells to report on")
    per_cell = []
    for cell in cells:
        tr: ExamTrace = cell["trace"]
        per_cell.append(
            {
                "instance": cell["instance"],
                "seed": cell["seed"],
                "final_loss": tr.final_loss,
                "best_loss": tr.best_loss,
                "final_p_true": 1.0 - tr.final_loss,
                "best_p_true": 1.0 - tr.best_loss,
                "best_step": tr.best_index + 1,
            }
        )

    classes = sorted({c["instance"] for c in per_cell})
    per_class = {}
    for cls in classes:
        rows = [c for c in per_cell if c["instance"] == cls]
        per_class[cls] = {
            "n": len(rows),
            "final_p_true_mean": float(np.mean([r["final_p_true"] for r in rows])),
            "best_p_true_mean": float(np.mean([r["best_p_true"] for r in rows])),
        }

    losses = np.stack([c["trace"].losses for c in cells])
    seeds = sorted({c["seed"] for c in cells})
    curve_per_seed = {
        str(s): np.mean(
            [c["trace"].losses for c in cells if c["seed"] == s], axis=0
        ).tolist()
        for s in seeds
    }

    report = {
        "direction": direction,
        "T": T,
        "n_cells": len(cells),
        "metrics": {
            "final_loss_mean": float(np.mean([c["final_loss"] for c in per_cell])),
            "best_loss_mean": float(np.mean([c["best_loss"] for c in per_cell])),
            "final_p_true_mean": float(np.mean([c["final_p_true"] for c in per_cell])),
            "best_p_true_mean": float(np.mean([c["best_p_true"] for c in per_cell])),
        },
        "per_cell": per_cell,
        "per_class": per_class,
        "curve_mean_loss": losses.mean(axis=0).tolist(),
        "curve_per_seed": curve_per_seed,
    }

    if t_checkpoints is not None:
        table = []
        for tc in t_checkpoints:
            if tc == 0:
                if standard_losses is None:
                    raise InvalidConfigError("t-checkpoint 0 needs the standard metric")
                mean_loss = float(np.mean(list(standard_losses.values())))
                table.append(
                    {
                        "T": 0,
                        "p_true": 1.0 - mean_loss,
                        "loss": mean_loss,
                        "n_standard": n_standard,
                    }
                )
                continue
            if not 1 <= tc <= T:
                raise InvalidConfigError(f"t-checkpoint {tc} outside [1, {T}]")
            prefixes = [c["trace"].prefix(tc) for c in cells]
            table.append(
                {
                    "T": tc,
                    "p_true_final": float(np.mean([1.0 - p.final_loss for p in prefixes])),
                    "p_true_best": float(np.mean([1.0 - p.best_loss for p in prefixes])),
                }
            )
        report["t_checkpoints"] = table
    return report


def recovery_rates(
    cells: list[dict], factor_index: int, lower: float, upper: float, k: int = LAST_K
) -> dict:
    """Fraction of each cell's last-k scenarios outside the training range."""
    per_cell = []
    for cell in cells:
        tr: ExamTrace = cell["trace"]
        tail = tr.scenarios[-k:, factor_index]
        outside = np.mean((tail < lower) | (tail > upper))
        per_cell.append(
            {"instance": cell["instance"], "seed": cell["seed"], "rate": float(outside)}
        )
    return {
        "per_cell": per_cell,
        "rate_mean": float(np.mean([c["rate"] for c in per_cell])),
        "last_k": k,
    }


def write_curves_csv(cells: list[dict], path: str | Path) -> None:
    """Per-step loss rows: header instance,t,loss,p_true."""
    lines = ["instance,t,loss,p_true"]
    for cell in cells:
        tr: ExamTrace = cell["trace"]
        for t in range(len(tr)):
            loss = tr.losses[t]
            lines.append(f"{cell['instance']},{t + 1},{_f(loss)},{_f(1.0 - loss)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_per_class_csv(cells: list[dict], path: str | Path) -> None:
    lines = ["class,n,final_loss_mean,best_loss_mean,final_p_true_mean,best_p_true_mean"]
    classes = sorted({c["instance"] for c in cells})
    for cls in classes:
        traces = [c["trace"] for c in cells if c["instance"] == cls]
        fl = float(np.mean([t.final_loss for t in traces]))
        bl = float(np.mean([t.best_loss for t in traces]))
        lines.append(
            f"{cls},{len(traces)},{_f(fl)},{_f(bl)},{_f(1.0 - fl)},{_f(1.0 - bl)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_scenario_matrix_csv(
    cells: list[dict], factor_names: tuple[str, ...], path: str | Path, k: int = LAST_K
) -> None:
    """Last-k scenarios per trace with loss and correctness, for embedding."""
    header = "instance,t," + ",".join(factor_names) + ",loss,p_true,correct"
    lines = [header]
    for cell in cells:
        tr: ExamTrace = cell["trace"]
        start = max(0, len(tr) - k)
        for t in range(start, len(tr)):
            vals = ",".join(_f(v) for v in tr.scenarios[t])
            correct = "" if tr.correct is None else str(int(tr.correct[t]))
            lines.append(
                f"{cell['instance']},{t + 1},{vals},{_f(tr.losses[t])},"
                f"{_f(1.0 - tr.losses[t])},{correct}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv_rows(path: str | Path) -> list[dict]:
    """Tiny CSV reader for the files written above (no quoting needed)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]
