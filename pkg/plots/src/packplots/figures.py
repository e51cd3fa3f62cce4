"""Rendering of the seven figure kinds from run artifacts."""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("soc", "voltage", "temperature", "inputs", "ageing-capacity",
         "ageing-resistance", "comparison-bars")


class PlotDataError(Exception):
    """The input artifact is missing, malformed or fails a data pre-check."""


@dataclass
class FigureSpec:
    """One figure request.

    ``trace`` is a CSV time series for the six per-run kinds and a JSON
    record (a run summary or a multi-method comparison) for
    ``comparison-bars``.  Threshold overlays draw horizontal limit lines.
    ``expect_monotone`` enables the SOC monotonicity pre-check used for
    controller runs.
    """

    trace: str
    kind: str
    out: str
    v_max: float | None = None
    t_max: float | None = None
    title: str | None = None
    expect_monotone: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotDataError(
                f"unknown figure kind '{self.kind}' (choose from "
                f"{', '.join(KINDS)})")


class Trace:
    """Parsed CSV time series: named columns plus the unit header."""

    def __init__(self, units: str, columns: list[str], data: np.ndarray):
        self.units = units
        self.columns = columns
        self.data = data
        self._index = {c: j for j, c in enumerate(columns)}

    @property
    def n_cells(self):
        return sum(1 for c in self.columns if c.startswith("z_"))

    def column(self, name):
        if name not in self._index:
            raise PlotDataError(f"missing column '{name}'")
        return self.data[:, self._index[name]]

    def block(self, prefix):
        names = [f"{prefix}_{i + 1}" for i in range(self.n_cells)]
        return np.column_stack([self.column(n) for n in names])


def load_trace(path) -> Trace:
    if not os.path.exists(path):
        raise PlotDataError(f"trace file not found: {path}")
    with open(path) as f:
        first = f.readline()
        if not first.startswith("# units:"):
            raise PlotDataError(f"{path}: missing '# units:' header line")
        header = f.readline().strip()
        if not header:
            raise PlotDataError(f"{path}: missing column header")
        body = f.read()
    columns = header.split(",")
    if not body.strip():
        raise PlotDataError(f"{path}: empty trace")
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    if data.shape[1] != len(columns):
        raise PlotDataError(f"{path}: {data.shape[1]} data columns vs "
                            f"{len(columns)} header names")
    tr = Trace(units=first[len("# units:"):].strip(), columns=columns,
               data=data)
    t = tr.column("t")
    if len(t) < 2:
        raise PlotDataError(f"{path}: need at least two samples")
    if np.any(np.diff(t) <= 0):
        raise PlotDataError(f"{path}: time column is not strictly increasing")
    if tr.n_cells < 1:
        raise PlotDataError(f"{path}: no per-cell columns found")
    return tr


def _check_monotone_soc(tr: Trace, path):
    z = tr.block("z")
    slack = 1e-6
    if np.any(np.diff(z, axis=0) < -slack):
        i = int(np.argwhere(np.diff(z, axis=0) < -slack)[0, 1])
        raise PlotDataError(
            f"{path}: SOC of cell {i + 1} is not monotone non-decreasing")


def _cell_lines(ax, t, Y, ylabel):
    for i in range(Y.shape[1]):
        ax.plot(t / 60.0, Y[:, i], label=f"cell {i + 1}", lw=1.2)
    ax.set_xlabel("time [min]")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncols=2)


def _render_trace_figure(spec: FigureSpec):
    tr = load_trace(spec.trace)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    t = tr.column("t")
    if spec.kind == "soc":
        if spec.expect_monotone:
            _check_monotone_soc(tr, spec.trace)
        _cell_lines(ax, t, tr.block("z"), "state of charge [-]")
        ax.axhline(1.0, color="k", ls=":", lw=0.8)
    elif spec.kind == "voltage":
        _cell_lines(ax, t, tr.block("V"), "cell voltage [V]")
        if spec.v_max is not None:
            ax.axhline(spec.v_max, color="r", ls="--", lw=1.0,
                       label=f"limit {spec.v_max:g} V")
            ax.legend(fontsize=8, ncols=2)
    elif spec.kind == "temperature":
        _cell_lines(ax, t, tr.block("T"), "temperature [K]")
        ax.plot(t / 60.0, tr.column("T_sink"), "k-.", lw=1.0, label="sink")
        if spec.t_max is not None:
            ax.axhline(spec.t_max, color="r", ls="--", lw=1.0,
                       label=f"limit {spec.t_max:g} K")
        ax.legend(fontsize=8, ncols=2)
    elif spec.kind == "inputs":
        fig.clf()
        ax1, ax2 = fig.subplots(2, 1, sharex=True)
        ax1.step(t / 60.0, tr.column("I_branch"), where="post", lw=1.0)
        ax1.set_ylabel("branch current [A]")
        ax1.grid(alpha=0.3)
        Iapp = tr.block("Iapp")
        for i in range(Iapp.shape[1]):
            ax2.step(t / 60.0, Iapp[:, i], where="post", lw=0.9,
                     label=f"cell {i + 1}")
        ax2.set_ylabel("cell current [A]")
        ax2.set_xlabel("time [min]")
        ax2.grid(alpha=0.3)
        ax2.legend(fontsize=7, ncols=3)
        ax = ax1
    elif spec.kind == "ageing-capacity":
        _cell_lines(ax, t, tr.block("C_ah"), "available capacity [Ah]")
    elif spec.kind == "ageing-resistance":
        _cell_lines(ax, t, 1e3 * tr.block("Rsei"), "film resistance [mOhm]")
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    fig.savefig(spec.out, dpi=120)
    plt.close(fig)


_METHOD_KEYS = ("cccv", "voltage", "nmpc")


def _render_comparison(spec: FigureSpec):
    if not os.path.exists(spec.trace):
        raise PlotDataError(f"summary file not found: {spec.trace}")
    with open(spec.trace) as f:
        try:
            record = json.load(f)
        except json.JSONDecodeError as exc:
            raise PlotDataError(f"{spec.trace}: {exc}") from exc
    if not isinstance(record, dict) or not record:
        raise PlotDataError(f"{spec.trace}: expected a non-empty JSON object")

    if all(k in record for k in _METHOD_KEYS):
        # three-method comparison record
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.2))
        panels = [("extracted_ah", "extracted charge [Ah]"),
                  ("final_z_spread", "final SOC spread [-]"),
                  ("duration_s", "charge duration [s]")]
        for ax, (key, label) in zip(axes, panels):
            try:
                vals = [record[m][key] for m in _METHOD_KEYS]
            except (KeyError, TypeError) as exc:
                raise PlotDataError(
                    f"{spec.trace}: missing field {exc} for comparison")
            ax.bar(_METHOD_KEYS, vals, color=["C0", "C1", "C2"])
            ax.set_ylabel(label)
            ax.grid(alpha=0.3, axis="y")
    else:
        # single-run summary: per-cell bars
        if "final_z" not in record:
            raise PlotDataError(
                f"{spec.trace}: expected either a three-method comparison "
                "or a run summary with 'final_z'")
        z = np.asarray(record["final_z"], dtype=float)
        cells = [f"{i + 1}" for i in range(len(z))]
        panels = [(z, "final SOC [-]")]
        if "capacity_lost_ah" in record:
            panels.append((np.asarray(record["capacity_lost_ah"]),
                           "capacity lost [Ah]"))
        if "film_growth_ohm" in record:
            panels.append((1e3 * np.asarray(record["film_growth_ohm"]),
                           "film growth [mOhm]"))
        fig, axes = plt.subplots(1, len(panels),
                                 figsize=(3.0 * len(panels), 3.2))
        axes = np.atleast_1d(axes)
        for ax, (vals, label) in zip(axes, panels):
            ax.bar(cells, vals, color="C0")
            ax.set_xlabel("cell")
            ax.set_ylabel(label)
            ax.grid(alpha=0.3, axis="y")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    fig.savefig(spec.out, dpi=120)
    plt.close(fig)


def render(spec: FigureSpec) -> str:
    """Render one figure; returns the output path."""
    if spec.kind == "comparison-bars":
        _render_comparison(spec)
    else:
        _render_trace_figure(spec)
    return spec.out
