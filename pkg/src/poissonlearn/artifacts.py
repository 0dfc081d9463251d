"""On-disk formats: trajectories, checkpoints, loss curves, reports, manifests.

Everything is written deterministically (sorted inputs, 17 significant
digits, no timestamps) so identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .metrics import TABLE_COLUMNS, MetricsReport, dumps
from .nets import PoissonModel

LOSS_COLUMNS = ("epoch", "train_loss", "val_loss", "val_jacobiator")


def git_blob_sha1(data: bytes) -> str:
    """Content hash in git's blob format."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _write(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode()
    path.write_bytes(data)
    return git_blob_sha1(data)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


# --- trajectories -----------------------------------------------------------------

def write_trajectories(path, states, lengths, system: str, seed: int, dt: float) -> str:
    lines = []
    for traj, m in zip(states, lengths):
        rec = {"system": system, "seed": int(seed), "dt": float(dt), "states": traj[: int(m)]}
        lines.append(dumps(rec))
    return _write(Path(path), "\n".join(lines) + "\n")


def read_trajectories(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            rec["states"] = np.asarray(rec["states"], dtype=np.float64)
            out.append(rec)
    return out


# --- checkpoints, losses, reports -----------------------------------------------------

def write_checkpoint(path, model: PoissonModel) -> str:
    return _write(Path(path), dumps(model.to_checkpoint()) + "\n")


def read_checkpoint(path) -> PoissonModel:
    return PoissonModel.from_checkpoint(json.loads(Path(path).read_text()))


def write_losses(path, history: list[dict]) -> str:
    return _write(Path(path), _csv(LOSS_COLUMNS, ([h[c] for c in LOSS_COLUMNS] for h in history)))


def read_losses(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def write_report(directory, report: MetricsReport) -> dict[str, str]:
    directory = Path(directory)
    row = report.table_row()
    return {
        "report.json": _write(directory / "report.json", report.to_json() + "\n"),
        "report.csv": _write(directory / "report.csv", _csv(TABLE_COLUMNS, [[row[c] for c in TABLE_COLUMNS]])),
    }


def read_report(path) -> MetricsReport:
    return MetricsReport.from_json(Path(path).read_text())


def write_histogram(path, values) -> str:
    """One log10 value per evaluated point (zeros give -inf)."""
    values = np.abs(np.asarray(values, dtype=np.float64).ravel())
    with np.errstate(divide="ignore"):
        logs = np.log10(values)
    return _write(Path(path), _csv(("log10_value",), ([v] for v in logs)))


def merge_reports(paths) -> str:
    """Table CSV over many report files, one row per (system, flavor, seed)."""
    rows = []
    for p in sorted(Path(x) for x in paths):
        rep = read_report(p)
        seed = p.parent.name
        row = rep.table_row()
        rows.append([row["system"], row["flavor"], seed] + [row[c] for c in TABLE_COLUMNS[2:]])
    header = TABLE_COLUMNS[:2] + ("seed",) + TABLE_COLUMNS[2:]
    return _csv(header, rows)


def write_text(path, text: str) -> str:
    return _write(Path(path), text)


def write_gnu_dat(path, header: list[str], columns) -> str:
    """Whitespace-separated columns with a ``#`` header line."""
    cols = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    lines = ["# " + " ".join(header)]
    lines += [" ".join(format(v, ".17g") for v in row) for row in cols]
    return _write(Path(path), "\n".join(lines) + "\n")
