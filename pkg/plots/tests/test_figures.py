"""Figure rendering against synthetic artifacts matching the CSV contract."""

import json
import os

import numpy as np
import pytest

from packplots import FigureSpec, PlotDataError, render
from packplots.cli import main, render_all


N = 2
UNITS = ("# units: t s, I A, T K, C Ah, Rsei Ohm, charge As; "
         "z dimensionless\n")


def trace_csv(path, n_rows=30, soc_monotone=True):
    cols = (["t", "I_branch"]
            + [f"{q}_{i+1}" for q in ("z", "V", "T", "C_ah", "Rsei", "Iapp")
               for i in range(N)]
            + ["T_sink"] + [f"charge_as_{i+1}" for i in range(N)])
    t = 10.0 * np.arange(n_rows)
    z = np.linspace(0.2, 0.95, n_rows)[:, None] + [0.0, 0.02]
    if not soc_monotone:
        z[n_rows // 2] -= 0.05
    V = 3.6 + 0.5 * z
    T = 298.15 + 4.0 * np.sin(t / 200.0)[:, None] + [0.0, 0.5]
    C = np.full((n_rows, N), 7.5) - 1e-4 * t[:, None]
    R = np.full((n_rows, N), 2e-3) + 1e-8 * t[:, None]
    I_app = np.tile([-3.0, -2.0], (n_rows, 1))
    data = np.column_stack([t, np.full(n_rows, -3.0), z, V, T, C, R, I_app,
                            np.full(n_rows, 298.2), -3.0 * t[:, None]
                            * np.ones(N)])
    with open(path, "w") as f:
        f.write(UNITS)
        f.write(",".join(cols) + "\n")
        np.savetxt(f, data, delimiter=",", fmt="%.10g")
    return str(path)


def summary_json(path, with_ageing=True):
    rec = {"final_z": [0.99, 1.0], "final_z_spread": 0.01,
           "peak_V": 4.19, "peak_T": 305.0, "duration_s": 2000.0,
           "extracted_ah": 6.1, "stop_reason": "charged"}
    if with_ageing:
        rec["capacity_lost_ah"] = [0.01, 0.012]
        rec["film_growth_ohm"] = [1e-5, 1.2e-5]
    path.write_text(json.dumps(rec))
    return str(path), rec


@pytest.mark.parametrize("kind", ["soc", "voltage", "temperature", "inputs",
                                  "ageing-capacity", "ageing-resistance"])
def test_trace_kinds_render(tmp_path, kind):
    csv = trace_csv(tmp_path / "trace.csv")
    out = tmp_path / f"{kind}.png"
    render(FigureSpec(trace=csv, kind=kind, out=str(out),
                      v_max=4.2, t_max=313.15))
    assert out.exists() and out.stat().st_size > 0


def test_soc_monotonicity_precheck(tmp_path):
    csv = trace_csv(tmp_path / "trace.csv", soc_monotone=False)
    out = tmp_path / "soc.png"
    with pytest.raises(PlotDataError, match="monotone"):
        render(FigureSpec(trace=csv, kind="soc", out=str(out),
                          expect_monotone=True))
    assert not out.exists()
    # without the pre-check the same data renders fine
    render(FigureSpec(trace=csv, kind="soc", out=str(out)))
    assert out.exists()


def test_comparison_bars_from_run_summary(tmp_path):
    path, _ = summary_json(tmp_path / "summary.json")
    out = tmp_path / "bars.png"
    render(FigureSpec(trace=path, kind="comparison-bars", out=str(out)))
    assert out.exists() and out.stat().st_size > 0


def test_comparison_bars_from_compare_record(tmp_path):
    _, rec = summary_json(tmp_path / "s.json")
    compare = tmp_path / "compare.json"
    compare.write_text(json.dumps({m: rec for m in
                                   ("cccv", "voltage", "nmpc")}))
    out = tmp_path / "bars.png"
    render(FigureSpec(trace=str(compare), kind="comparison-bars",
                      out=str(out)))
    assert out.exists()


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(PlotDataError, match="unknown figure kind"):
        FigureSpec(trace="x.csv", kind="scatter", out="y.png")


def test_missing_units_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,I_branch\n0,1\n1,1\n")
    with pytest.raises(PlotDataError, match="units"):
        render(FigureSpec(trace=str(path), kind="soc", out="x.png"))


def test_empty_trace_no_image(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(UNITS + "t,I_branch,z_1\n")
    out = tmp_path / "soc.png"
    with pytest.raises(PlotDataError, match="empty"):
        render(FigureSpec(trace=str(path), kind="soc", out=str(out)))
    assert not out.exists()


def test_non_monotone_time_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(UNITS + "t,I_branch,z_1\n0,1,0.5\n0,1,0.6\n")
    with pytest.raises(PlotDataError, match="increasing"):
        render(FigureSpec(trace=str(path), kind="soc", out="x.png"))


def test_missing_column_named(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(UNITS + "t,z_1\n0,0.5\n1,0.6\n")
    with pytest.raises(PlotDataError, match="I_branch"):
        render(FigureSpec(trace=str(path), kind="inputs", out="x.png"))


def make_rundir(tmp_path):
    rec_by_run = {}
    for run in ("cccv", "voltage", "nmpc"):
        d = tmp_path / run
        d.mkdir()
        trace_csv(d / "trace.csv")
        _, rec = summary_json(d / "summary.json")
        rec_by_run[run] = rec
    (tmp_path / "compare.json").write_text(json.dumps(rec_by_run))
    return tmp_path


def test_render_all_full_set(tmp_path):
    rundir = make_rundir(tmp_path)
    written = render_all(str(rundir))
    # seven kinds for each of the three runs, plus the cross-method figure
    assert len(written) == 7 * 3 + 1
    for path in written:
        assert os.path.exists(path) and os.path.getsize(path) > 0


def test_render_all_rejects_incomplete_dir(tmp_path):
    (tmp_path / "cccv").mkdir()
    with pytest.raises(PlotDataError, match="trace.csv"):
        render_all(str(tmp_path))


def test_cli_render(tmp_path):
    csv = trace_csv(tmp_path / "trace.csv")
    out = tmp_path / "v.png"
    rc = main(["render", "--trace", csv, "--kind", "voltage",
               "--out", str(out), "--v-max", "4.2"])
    assert rc == 0
    assert out.exists()


def test_cli_error_exit_code(tmp_path, capsys):
    rc = main(["render", "--trace", str(tmp_path / "nope.csv"),
               "--kind", "soc", "--out", str(tmp_path / "x.png")])
    assert rc == 1
    assert "not found" in capsys.readouterr().err
