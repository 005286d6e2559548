"""
Re-serialize report CSVs as long-format plot data.

Every output file has the columns panel, series, x, y: one panel per
sub-plot, one series per curve. Nothing is rendered here.
"""

import logging
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ReportError
from .fileio import atomic_write_text
from .nn_core import ActivationKind
from .reports import FLOAT_FORMAT, read_table, report_tables

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ["panel", "series", "x", "y"]

ACTIVATION_SCALES = (1.0, 2.0, 5.0, 10.0)
ACTIVATION_BETAS = (0.01, 0.1, 1.0)


def _long(df, panel, series, x, metrics):
    """Melt `metrics` columns of df and build panel/series labels"""
    melted = df.melt(id_vars=[c for c in df.columns if c not in metrics],
                     value_vars=metrics, var_name="metric", value_name="y")
    if melted.empty:
        return pd.DataFrame(columns=PLOT_COLUMNS)
    out = pd.DataFrame({
        "panel": melted.apply(panel, axis=1),
        "series": melted.apply(series, axis=1),
        "x": melted[x],
        "y": melted["y"],
    })
    return out[PLOT_COLUMNS]


def layerdist_plot(df):
    """Distance per layer index, one panel per norm, one curve per (placement, beta)"""
    return _long(df, lambda r: r["norm"], lambda r: f"{r['cap_layers']}/max={r['train_beta']}",
                 "layer_index", ["mean_distance"])


def accuracy_plot(df):
    """Clean and robust accuracy against the trained cap value, labelled separately"""
    return _long(df, lambda r: r["metric"], lambda r: r["cap_layers"], "train_beta",
                 ["std_acc", "rob_acc"])


def capsweep_plot(df):
    return _long(df, lambda r: f"{r['arch']}/{r['metric']}",
                 lambda r: f"{r['cap_layers']}/initial={r['train_beta']}", "eval_beta",
                 ["std_acc", "rob_acc", "success_rate"])


def zerograd_plot(df):
    return _long(df, lambda r: f"{r['arch']}/{r['metric']}",
                 lambda r: f"{r['cap_layers']}/initial={r['train_beta']}", "eval_beta",
                 ["mean_distance", "found_fraction"])


def table1_plot(df):
    return _long(df, lambda r: f"adv={r['adv_training']}", lambda r: r["metric"], "max_val",
                 ["clean_acc", "fgsm_acc", "pgd_acc", "cw_acc"])


def smap_plot(df):
    """Mean sensitivity total per trained cap value"""
    means = df[df["image_id"] == "mean"]
    return _long(means, lambda r: "mean_total", lambda r: "mean", "train_beta", ["total"])


PLOTTERS = {
    "layerdist": layerdist_plot,
    "accuracy": accuracy_plot,
    "capsweep": capsweep_plot,
    "zerograd": zerograd_plot,
    "table1": table1_plot,
    "smap": smap_plot,
}


def activation_shapes(scales=ACTIVATION_SCALES, betas=ACTIVATION_BETAS, z_min=-4.0, z_max=4.0,
                      n_points=161):
    """Function values of scaled Sigmoid/Tanh and capped ReLU over [z_min, z_max]"""
    z = np.linspace(z_min, z_max, n_points)
    kinds = [("sigmoid", ActivationKind.sigmoid(c)) for c in scales]
    kinds += [("tanh", ActivationKind.tanh(c)) for c in scales]
    kinds += [("capped_relu", ActivationKind.capped(b)) for b in betas]
    frames = [
        pd.DataFrame({"panel": panel, "series": str(kind), "x": z, "y": kind.apply(z)})
        for panel, kind in kinds
    ]
    return pd.concat(frames, ignore_index=True)[PLOT_COLUMNS]


def _write(df, path):
    buf = StringIO()
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return atomic_write_text(path, buf.getvalue())


def write_plot_data(report_dir=None, out_dir=None, activations=False):
    """
    Write plot_<table>.csv for every report table found in report_dir.

    Args:
        report_dir: directory holding report CSVs (may be None with activations=True)
        out_dir: destination; defaults to report_dir
        activations: also write plot_activations.csv

    Returns:
        list of written paths

    Raises:
        ReportError: nothing to convert
    """
    if report_dir is None and not activations:
        raise ReportError("Nothing to do: give a report directory or ask for activation shapes")
    out = Path(out_dir or report_dir or ".")
    written = []
    if report_dir is not None:
        found = report_tables(report_dir)
        if not found:
            raise ReportError(f"No report CSVs found in {report_dir}")
        for name, path in found:
            written.append(_write(PLOTTERS[name](read_table(path)), out / f"plot_{name}.csv"))
    if activations:
        written.append(_write(activation_shapes(), out / "plot_activations.csv"))
    logger.info("wrote %d plot-data files to %s", len(written), out)
    return written
