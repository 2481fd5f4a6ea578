"""CSV and JSON report emission for experiment results.

Files are written via a temp file plus atomic rename, and rendering is
deterministic, so re-emitting the same results is byte-identical.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .pipeline import ExperimentResult, final_and_average_accuracy


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _runs_csv(results: "list[ExperimentResult]") -> str:
    num_tasks = results[0].matrices[0].num_tasks
    header = ["task", "seed", "variant"]
    header += [f"R_{i + 1}" for i in range(num_tasks)]
    header.append("A_b")
    lines = [",".join(header)]
    for result in results:
        for seed, matrix in zip(result.seeds, result.matrices):
            for k in range(matrix.num_tasks):
                row = [str(k + 1), str(seed), result.variant]
                for i in range(num_tasks):
                    value = matrix.values[k, i]
                    row.append("" if np.isnan(value) else f"{value:.2f}")
                row.append(f"{np.mean(matrix.values[k, : k + 1]):.2f}")
                lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _aggregate_csv(results: "list[ExperimentResult]") -> str:
    lines = ["variant,A_bar_mean,A_bar_std,A_B_mean,A_B_std"]
    for result in results:
        lines.append(
            f"{result.variant},{result.a_bar_mean:.2f},{result.a_bar_std:.2f},"
            f"{result.a_b_mean:.2f},{result.a_b_std:.2f}"
        )
    return "\n".join(lines) + "\n"


def _structured(results: "list[ExperimentResult]") -> str:
    payload = []
    for result in results:
        runs = []
        for seed, matrix in zip(result.seeds, result.matrices):
            a_b, a_bar = final_and_average_accuracy(matrix)
            runs.append(
                {
                    "seed": seed,
                    "accuracy_matrix": [
                        [None if np.isnan(v) else round(float(v), 2) for v in row]
                        for row in matrix.values
                    ],
                    "A_B": round(a_b, 2),
                    "A_bar": round(a_bar, 2),
                }
            )
        payload.append(
            {
                "variant": result.variant,
                "A_bar_mean": round(result.a_bar_mean, 2),
                "A_bar_std": round(result.a_bar_std, 2),
                "A_B_mean": round(result.a_b_mean, 2),
                "A_B_std": round(result.a_b_std, 2),
                "runs": runs,
            }
        )
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_report(results, out_dir, fmt: str = "csv") -> "list[Path]":
    """Write per-seed accuracy tables and the aggregate metric table."""
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        for name, text in (("runs.csv", _runs_csv(results)), ("aggregate.csv", _aggregate_csv(results))):
            path = out / name
            _atomic_write(path, text)
            written.append(path)
    elif fmt == "structured":
        path = out / "results.json"
        _atomic_write(path, _structured(results))
        written.append(path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return written
