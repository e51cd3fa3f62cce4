"""Command-line figure generation for packcharge run directories."""

from __future__ import annotations

import argparse
import os
import sys

from .figures import KINDS, FigureSpec, PlotDataError, render

# default threshold overlays, matching the shipped charge limits
V_MAX = 4.2
T_MAX = 313.15

_RUNS = ("cccv", "voltage", "nmpc")
_TRACE_KINDS = [k for k in KINDS if k != "comparison-bars"]


def render_all(rundir: str, outdir: str | None = None) -> list[str]:
    """Regenerate every figure for a completed comparison run directory.

    Expects ``<rundir>/{cccv,voltage,nmpc}/`` with ``trace.csv`` and
    ``summary.json`` each, plus ``<rundir>/compare.json``.  Produces the
    seven kinds per run: six from the charge trace and a per-run
    comparison-bars panel from its summary, plus one cross-method
    comparison-bars figure at the top level.  Only the NMPC SOC figure
    carries the monotonicity pre-check: the controller is the component
    whose SOC trajectories are contractually monotone.
    """
    out_base = outdir or rundir
    written = []
    for run in _RUNS:
        d = os.path.join(rundir, run)
        trace = os.path.join(d, "trace.csv")
        if not os.path.exists(trace):
            raise PlotDataError(f"missing {trace}; not a compare run dir?")
        od = os.path.join(out_base, run)
        os.makedirs(od, exist_ok=True)
        for kind in _TRACE_KINDS:
            spec = FigureSpec(
                trace=trace, kind=kind,
                out=os.path.join(od, f"{kind}.png"),
                v_max=V_MAX if kind == "voltage" else None,
                t_max=T_MAX if kind == "temperature" else None,
                title=f"{run}: {kind}",
                expect_monotone=(run == "nmpc" and kind == "soc"))
            written.append(render(spec))
        written.append(render(FigureSpec(
            trace=os.path.join(d, "summary.json"), kind="comparison-bars",
            out=os.path.join(od, "comparison-bars.png"),
            title=f"{run}: per-cell outcome")))
    written.append(render(FigureSpec(
        trace=os.path.join(rundir, "compare.json"), kind="comparison-bars",
        out=os.path.join(out_base, "comparison-bars.png"),
        title="three-method comparison")))
    return written


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="packplots",
        description="Figures from packcharge CSV traces and summaries")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("render", help="render a single figure")
    s.add_argument("--trace", required=True,
                   help="trace CSV (or summary/compare JSON for "
                        "comparison-bars)")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--out", required=True, help="output image path")
    s.add_argument("--v-max", type=float, default=None)
    s.add_argument("--t-max", type=float, default=None)
    s.add_argument("--title", default=None)
    s.add_argument("--expect-monotone", action="store_true",
                   help="fail if any SOC curve decreases (soc kind only)")

    s = sub.add_parser("render-all",
                       help="regenerate the full figure set for a "
                            "compare run directory")
    s.add_argument("--rundir", required=True)
    s.add_argument("--outdir", default=None,
                   help="write images here instead of into the run dir")

    args = p.parse_args(argv)
    try:
        if args.command == "render":
            path = render(FigureSpec(
                trace=args.trace, kind=args.kind, out=args.out,
                v_max=args.v_max, t_max=args.t_max, title=args.title,
                expect_monotone=args.expect_monotone))
            print(path)
        else:
            for path in render_all(args.rundir, args.outdir):
                print(path)
    except PlotDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
