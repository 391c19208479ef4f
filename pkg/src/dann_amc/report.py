"""Collect finished run cells and render the DCA, average-accuracy and per-class tables.

Report generation reads run artifacts only and never writes inside cell
directories, so re-running it is side-effect free on run data.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from . import LABELS
from .config import DIRECTIONS
from .signal import BANDS
from .train import MetricsReport, improvement

DIRECTION_TITLES = {"rayleigh_to_rician": "Rayleigh→Rician", "rician_to_rayleigh": "Rician→Rayleigh"}
MOD_TITLES = {"BPSK": "BPSK", "QPSK": "QPSK", "16QAM": "16-QAM", "64QAM": "64-QAM", "256QAM": "256-QAM"}

TABLE1_COLS = ["Frequency", "Direction", "DCA Before", "DCA After"]
TABLE2_COLS = ["Frequency", "Direction", "Avg. Baseline", "Avg. DANN", "Abs. Improvement", "% Improvement"]
TABLE3_COLS = ["Direction", "Modulation", "Baseline", "DANN", "Δ Accuracy"]
MISSING_NOTE = "* blank: no completed run for this cell"


class EmptyRunRoot(Exception):
    pass


@dataclass
class CellResult:
    band: str
    direction: str
    seed: int
    baseline: MetricsReport
    dann: MetricsReport
    path: Path


@dataclass
class Tables:
    table1: list[list[str]] = field(default_factory=list)
    table2: list[list[str]] = field(default_factory=list)
    table3: dict[str, list[list[str]]] = field(default_factory=dict)
    missing: bool = False


def cell_dir(root: Path, band: str, direction: str, seed: int) -> Path:
    return Path(root) / "cells" / band / direction / f"seed{seed}"


def read_status(path: Path) -> dict | None:
    f = Path(path) / "status.json"
    if not f.exists():
        return None
    return json.loads(f.read_text())


def collect(root) -> list[CellResult]:
    root = Path(root)
    out = []
    for status_file in sorted(root.glob("cells/*/*/seed*/status.json")):
        status = json.loads(status_file.read_text())
        if status.get("status") != "ok":
            continue
        d = status_file.parent
        out.append(CellResult(
            status["band"], status["direction"], int(status["seed"]),
            MetricsReport.from_dict(json.loads((d / "baseline_report.json").read_text())),
            MetricsReport.from_dict(json.loads((d / "dann_report.json").read_text())), d))
    return out


def signed(v: float) -> str:
    s = f"{v:+.2f}"
    return "0.00" if s in ("+0.00", "-0.00") else s


def _agg(values, fmt) -> str:
    """Median, plus the min-max range when more than one seed contributed."""
    values = list(values)
    med = fmt(statistics.median(values))
    if len(values) == 1:
        return med
    return f"{med} ({fmt(min(values))}–{fmt(max(values))})"


def _f2(v):
    return f"{v:.2f}"


def _f4(v):
    return f"{v:.4f}"


def _band_key(band: str):
    return (BANDS.index(band), band) if band in BANDS else (len(BANDS), band)


def _pretty_band(band: str) -> str:
    for unit in ("MHz", "GHz", "kHz"):
        if band.endswith(unit) and not band.endswith(" " + unit):
            return band[: -len(unit)] + " " + unit
    return band


def build_tables(cells: list[CellResult]) -> Tables:
    if not cells:
        raise EmptyRunRoot("no completed run cells")
    grouped: dict[tuple, list[CellResult]] = {}
    for c in cells:
        grouped.setdefault((c.band, c.direction), []).append(c)
    bands = sorted({c.band for c in cells}, key=_band_key)
    dirs = [d for d in DIRECTIONS if any(c.direction == d for c in cells)] or list(DIRECTIONS)
    dirs = list(DIRECTIONS) if len(dirs) < len(DIRECTIONS) else dirs
    t = Tables()
    for band in bands:
        rows3 = []
        for direction in dirs:
            group = sorted(grouped.get((band, direction), []), key=lambda c: c.seed)
            head = [_pretty_band(band), DIRECTION_TITLES[direction]]
            if not group:
                t.missing = True
                t.table1.append(head + ["", ""])
                t.table2.append(head + ["", "", "", ""])
                for i, name in enumerate(LABELS):
                    rows3.append([DIRECTION_TITLES[direction] if i == 0 else "", MOD_TITLES[name], "", "", ""])
                continue
            t.table1.append(head + [_agg((c.dann.dca_before for c in group), _f4),
                                    _agg((c.dann.dca_after for c in group), _f4)])
            gains = [improvement(c.baseline.avg_acc, c.dann.avg_acc) for c in group]
            t.table2.append(head + [_agg((c.baseline.avg_acc for c in group), _f2),
                                    _agg((c.dann.avg_acc for c in group), _f2),
                                    _agg((g[0] for g in gains), signed),
                                    _agg((g[1] for g in gains), signed)])
            for i, name in enumerate(LABELS):
                pairs = [(c.baseline.per_class_acc[i], c.dann.per_class_acc[i]) for c in group]
                pairs = [(b, d) for b, d in pairs if b == b and d == d]
                label = DIRECTION_TITLES[direction] if i == 0 else ""
                if not pairs:
                    t.missing = True
                    rows3.append([label, MOD_TITLES[name], "", "", ""])
                    continue
                rows3.append([label, MOD_TITLES[name], _agg((b for b, _ in pairs), _f2),
                              _agg((d for _, d in pairs), _f2), _agg((d - b for b, d in pairs), signed)])
        t.table3[band] = rows3
    return t


def render_text(cols: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [cols] + rows) for i in range(len(cols))]
    fmt = lambda r: "  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip()  # noqa: E731
    lines = [fmt(cols), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


def render_csv(cols: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    w.writerows(rows)
    return buf.getvalue()


def _fill_direction(rows: list[list[str]]) -> list[list[str]]:
    """Repeat each direction on its continuation rows; the text layout groups them instead."""
    filled, current = [], ""
    for row in rows:
        current = row[0] or current
        filled.append([current] + row[1:])
    return filled


def render_all(t: Tables) -> dict[str, str]:
    """File name -> contents for every text and CSV table."""
    note = ("\n" + MISSING_NOTE) if t.missing else ""
    files = {
        "table1_dca.txt": "Domain classification accuracy\n\n" + render_text(TABLE1_COLS, t.table1) + note + "\n",
        "table1_dca.csv": render_csv(TABLE1_COLS, t.table1),
        "table2_avg_acc.txt": ("Average accuracy (%)\n\n" + render_text(TABLE2_COLS, t.table2) + note + "\n"),
        "table2_avg_acc.csv": render_csv(TABLE2_COLS, t.table2),
    }
    for band, rows in t.table3.items():
        files[f"table3_per_class_{band}.txt"] = (f"Per-class accuracy (%), {_pretty_band(band)}\n\n"
                                                 + render_text(TABLE3_COLS, rows) + note + "\n")
        files[f"table3_per_class_{band}.csv"] = render_csv(TABLE3_COLS, _fill_direction(rows))
    return files


def write_report(root, out_dir=None) -> dict[str, str]:
    root = Path(root)
    files = render_all(build_tables(collect(root)))
    out_dir = Path(out_dir) if out_dir else root / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)
    return files
