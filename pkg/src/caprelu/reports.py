"""
Experiment reports: keyed result tables written as CSV, a JSON echo of the
configuration and run metadata, and an optional Excel workbook.
"""

import json
import logging
import platform
import subprocess
from dataclasses import dataclass, field
from datetime import datetime
from io import StringIO
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from .errors import ReportError
from .fileio import atomic_write_text

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"
GRID_FORMAT = "%.10g"

# Fixed CSV schemas; the leading `key` columns identify a row.
SCHEMAS = {
    "table1": (["max_val", "adv_training", "clean_acc", "fgsm_acc", "pgd_acc", "cw_acc"], 2),
    "layerdist": (["cap_layers", "train_beta", "norm", "layer_index", "mean_distance"], 4),
    "accuracy": (["cap_layers", "train_beta", "std_acc", "rob_acc"], 2),
    "capsweep": (["arch", "cap_layers", "train_beta", "eval_beta", "std_acc", "rob_acc", "success_rate"], 4),
    "zerograd": (["arch", "cap_layers", "train_beta", "eval_beta", "mean_distance", "found_fraction"], 4),
    "smap": (["train_beta", "image_id", "total"], 2),
}


def git_stamp():
    """Short commit hash of the working tree, or None outside a git checkout"""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if out.returncode != 0:
        return None
    return out.stdout.strip() or None


def run_metadata():
    from . import __version__

    return {
        "version": __version__,
        "git": git_stamp(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "created": datetime.now().isoformat(timespec="seconds"),
    }


@dataclass
class ReportTable:
    name: str
    columns: List[str]
    n_key: int
    rows: List[tuple] = field(default_factory=list)
    _keys: set = field(default_factory=set, repr=False)

    @classmethod
    def from_schema(cls, name):
        if name not in SCHEMAS:
            raise ReportError(f"Unknown report table '{name}'")
        columns, n_key = SCHEMAS[name]
        return cls(name, list(columns), n_key)

    def add(self, **values):
        missing = [c for c in self.columns if c not in values]
        extra = sorted(set(values) - set(self.columns))
        if missing or extra:
            raise ReportError(f"Row for {self.name} has missing {missing} / unknown {extra} columns")
        row = tuple(values[c] for c in self.columns)
        key = row[:self.n_key]
        if key in self._keys:
            raise ReportError(f"Duplicate row key {key} in {self.name}")
        self._keys.add(key)
        self.rows.append(row)

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=self.columns)

    def to_csv(self):
        buf = StringIO()
        self.to_frame().to_csv(buf, index=False, float_format=FLOAT_FORMAT, na_rep="",
                               lineterminator="\n")
        return buf.getvalue()


class ExperimentReport:
    """
    Result tables of one experiment run plus the configuration that produced them.
    """

    def __init__(self, kind, config=None, metadata=None):
        self.kind = kind
        self.config = config or {}
        self.metadata = run_metadata()
        self.metadata.update(metadata or {})
        self.tables: Dict[str, ReportTable] = {}
        self.grids: Dict[str, np.ndarray] = {}
        self.timings: Dict[str, float] = {}

    def table(self, name):
        if name not in self.tables:
            self.tables[name] = ReportTable.from_schema(name)
        return self.tables[name]

    def add_row(self, table, **values):
        self.table(table).add(**values)

    def add_grid(self, relpath, grid):
        if relpath in self.grids:
            raise ReportError(f"Duplicate grid {relpath}")
        self.grids[relpath] = np.asarray(grid, dtype=np.float64)

    def record_timing(self, key, seconds):
        self.timings[str(key)] = round(float(seconds), 3)

    def frame(self, name):
        if name not in self.tables:
            raise ReportError(f"Report has no table '{name}'")
        return self.tables[name].to_frame()

    def prepare_export_data(self):
        return {
            "kind": self.kind,
            "config": self.config,
            "metadata": self.metadata,
            "timings": self.timings,
            "tables": {name: len(t.rows) for name, t in self.tables.items()},
        }

    def save(self, output_dir):
        """
        Write every table as <name>.csv, every grid at its relative path and
        report.json, each file atomically.

        Returns:
            list of written paths
        """
        out = Path(output_dir)
        written = []
        try:
            out.mkdir(parents=True, exist_ok=True)
            for name, tbl in self.tables.items():
                written.append(atomic_write_text(out / f"{name}.csv", tbl.to_csv()))
            for relpath, grid in self.grids.items():
                buf = StringIO()
                np.savetxt(buf, np.atleast_2d(grid), fmt=GRID_FORMAT, delimiter=",")
                target = out / relpath
                target.parent.mkdir(parents=True, exist_ok=True)
                written.append(atomic_write_text(target, buf.getvalue()))
        except OSError as exc:
            raise ReportError(f"Failed to write report to {out}: {exc}") from exc
        ok, error = self.save_to_json(out / "report.json")
        if not ok:
            raise ReportError(error)
        written.append(out / "report.json")
        logger.info("wrote %d files to %s", len(written), out)
        return written

    def save_to_json(self, file_path):
        """
        Save the config echo and metadata as JSON.

        Returns:
            tuple: (success: bool, error_message: str or None)
        """
        try:
            text = json.dumps(self.prepare_export_data(), indent=2, ensure_ascii=False, default=str)
            atomic_write_text(file_path, text + "\n")
            return True, None
        except Exception as exc:
            return False, f"Failed to save JSON: {exc}"

    def export_to_excel(self, file_path):
        """
        Export the report tables to an Excel workbook, one worksheet per table.

        Returns:
            tuple: (success: bool, error_message: str or None)
        """
        if not self.tables:
            return False, "Report has no tables to export"
        try:
            from openpyxl import Workbook
            from openpyxl.styles import Alignment, Font, PatternFill

            wb = Workbook()
            wb.remove(wb.active)
            header_fill = PatternFill(start_color="E6F3FF", end_color="E6F3FF", fill_type="solid")
            for name, tbl in self.tables.items():
                ws = wb.create_sheet(title=name[:31])
                ws.append(tbl.columns)
                for cell in ws[1]:
                    cell.font = Font(bold=True, size=11)
                    cell.fill = header_fill
                    cell.alignment = Alignment(vertical="top")
                for row in tbl.rows:
                    ws.append([None if isinstance(v, float) and np.isnan(v) else v for v in row])

                for column in ws.columns:
                    max_length = max(len(str(c.value)) for c in column if c.value is not None)
                    ws.column_dimensions[column[0].column_letter].width = min(max_length + 2, 50)
                ws.freeze_panes = "A2"

            wb.save(file_path)
            return True, None
        except Exception as exc:
            return False, f"Failed to export Excel: {exc}"


def read_table(path):
    """Load a report CSV back; `uncapped` and `mean` stay strings"""
    try:
        return pd.read_csv(path, dtype={"train_beta": str, "eval_beta": str, "max_val": str,
                                         "image_id": str, "cap_layers": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ReportError(f"Cannot read report table {path}: {exc}") from exc


def report_tables(output_dir) -> List[Tuple[str, Path]]:
    """(name, path) of every known report CSV present in a directory"""
    out = Path(output_dir)
    return [(name, out / f"{name}.csv") for name in SCHEMAS if (out / f"{name}.csv").is_file()]
