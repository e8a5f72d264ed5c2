"""On-disk report formats. Every CSV starts with the ``# grace-lab v1`` schema tag."""

import csv
import json
from pathlib import Path

from .engine import RunReport

CSV_TAG = "# grace-lab v1"

RUN_COLUMNS = ["task", "seen_classes", "accuracy", "params", "backbones", "decision", "score", "tau",
               "lambda", "w", "P", "B", "buffer_size"]
ASSESS_COLUMNS = ["task", "measure", "raw", "normalized", "tau", "decision"]
COMPRESSION_COLUMNS = ["task", "epoch", "kd", "feat", "ce", "lambda"]
SWEEP_COLUMNS = ["tau1", "rho", "seed", "status", "final_params", "final_backbones", "avg_acc", "last_acc",
                 "backbone_trajectory", "decisions", "pareto"]


def cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_TAG + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell(v) for v in row])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def run_rows(report: RunReport) -> list:
    return [
        (r.task, r.seen_classes, r.accuracy, r.params, r.backbones, r.decision, r.score, r.tau,
         r.lam, r.w, r.P, r.B, r.buffer_size)
        for r in report.records
    ]


def assess_rows(report: RunReport) -> list:
    return [(t, rep.measure, rep.raw, rep.normalized, tau, decision)
            for t, rep, tau, decision in report.saturation_log]


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_run(report: RunReport, out_dir) -> Path:
    """run.csv, summary.json and compression.csv are deterministic; timings.json is not."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "run.csv", RUN_COLUMNS, run_rows(report))
    write_json(out / "summary.json", report.summary())
    write_csv(out / "compression.csv", COMPRESSION_COLUMNS, report.compression_log)
    write_json(out / "timings.json", [{"task": t, "phase": p, "seconds": s} for t, p, s in report.timings])
    return out
