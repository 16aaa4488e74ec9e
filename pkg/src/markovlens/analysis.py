"""Standalone PCMCI + MVS analysis of an external panel, and the panel CSV format.

Panel CSV: a header row of variable names, then one row of decimal reals per
time step.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from markovlens.errors import ConfigurationError
from markovlens.mvs import MvsConfig, MvsReport, compute_mvs
from markovlens.pcmci import PcmciResult, TimeSeriesPanel, run_pcmci


def read_panel_csv(path) -> TimeSeriesPanel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read panel file {path}: {exc}") from exc
    return parse_panel_csv(text)


def parse_panel_csv(text: str) -> TimeSeriesPanel:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise ConfigurationError("panel CSV needs a header row and at least one data row")
    names = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ConfigurationError(f"panel CSV has a non-numeric entry: {exc}") from exc
    if data.shape[1] != len(names):
        raise ConfigurationError(f"panel CSV rows have {data.shape[1]} columns, header has {len(names)}")
    return TimeSeriesPanel(data, names)


def write_panel_csv(panel: TimeSeriesPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(panel.var_names)
        w.writerows([[repr(float(x)) for x in row] for row in panel.data])


def analyze_panel(panel: TimeSeriesPanel, tau_max: int = 5, alpha: float = 0.05) -> tuple[PcmciResult, MvsReport]:
    result = run_pcmci(panel, tau_max, alpha)
    return result, compute_mvs(result, MvsConfig(tau_max=tau_max, alpha_level=alpha))


def link_table(result: PcmciResult, alpha: float | None = None) -> list[dict]:
    """Significant links with variable names in place of indices."""
    names = result.var_names or [str(i) for i in range(result.N)]
    return [dict(r, child=names[r["child"]], parent=names[r["parent"]]) for r in result.significant_links(alpha)]
