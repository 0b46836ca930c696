"""Command line entry point: ``tsode {bench, demo, fit-closed, spectrum}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import GridConfig, emit_plot, emit_table, run_grid
from .closed_form import fit_closed_form
from .demos import DEMOS, DemoFailed, run_demo
from .series import SeriesError, load_csv
from .spectrum import EigenNonConvergence, load_matrix_csv, solution_form_report, spectrum_report

EXIT_FAILED_CELLS = 2


def _print_matrix(label, A):
    print(f"{label}:")
    print(np.array2string(np.asarray(A), precision=5, suppress_small=True))


def cmd_bench(args):
    cfg = GridConfig.from_json(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    out = Path(args.out)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    table = run_grid(cfg)
    emit_table(table, out / "results.csv", "csv")
    emit_table(table, out / "results.md", "markdown")
    for (ds, sigma, n, idx), ex in sorted(table.examples.items()):
        name = f"{ds}_sigma{sigma:g}_n{n}_w{idx}".replace(":", "_").replace("/", "_")
        emit_plot(ex["history"], ex["truth"], ex["predictions"], out / "plots" / f"{name}.svg",
                  title=f"{ds}, sigma={sigma:g}, n={n}, test window {idx}")
    (out / "config.json").write_text(cfg.to_json())
    print((out / "results.md").read_text())
    if table.failures:
        (out / "failures.json").write_text(json.dumps([f.__dict__ for f in table.failures], indent=2))
        print(f"{len(table.failures)} cell(s) failed; see {out / 'failures.json'}", file=sys.stderr)
        return EXIT_FAILED_CELLS
    return 0


def cmd_demo(args):
    try:
        report = run_demo(args.name, seed=args.seed)
    except DemoFailed as exc:
        print(str(exc), file=sys.stderr)
        return 1
    for key, value in report.items():
        if key in ("matrix", "deviation", "readout"):
            _print_matrix(key, value)
        elif key == "eigenvalues":
            print("eigenvalues:")
            for ev in value:
                print(f"  {ev['re']:+.6f} {ev['im']:+.6f}i")
        else:
            print(f"{key}: {value}")
    out = Path(args.out or f"{args.name}.json")
    out.write_text(json.dumps(report, indent=2, ensure_ascii=False))
    print(f"report written to {out}")
    return 0


def cmd_fit_closed(args):
    ts = load_csv(args.input, args.column, args.time_column)
    fit = fit_closed_form(ts.values, args.modes, dt=ts.dt, seed=args.seed)
    m = fit.model
    print(f"modes: {m.K}  rmse: {fit.rmse:.6g}  evaluations: {fit.nfev}")
    print("betas:", " ".join(f"{b:.6g}" for b in m.betas))
    print("C:", " ".join(f"{c:.6g}" for c in m.C))
    print(f"t0: {m.t0:.6g}")
    if args.out:
        m.save(args.out)
        print(f"model written to {args.out}")
    return 0


def cmd_spectrum(args):
    A = load_matrix_csv(args.matrix)
    report = spectrum_report(A)
    print(solution_form_report(A).rendering)
    for ev in report["eigenvalues"]:
        print(f"  {ev['re']:+.8f} {ev['im']:+.8f}i")
    out = Path(args.out)
    out.write_text(json.dumps(report, indent=2, ensure_ascii=False))
    print(f"report written to {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tsode", description="Linear ODE forecasting, spectra and benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a benchmark grid")
    b.add_argument("--config", required=True, help="JSON file with grid settings")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--workers", type=int, default=None, help="parallel worker processes")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("demo", help="run a small linear-system experiment")
    d.add_argument("name", choices=sorted(DEMOS))
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", help="JSON report path (default <name>.json)")
    d.set_defaults(func=cmd_demo)

    f = sub.add_parser("fit-closed", help="fit the closed-form model to one CSV column")
    f.add_argument("--input", required=True)
    f.add_argument("--column", required=True)
    f.add_argument("--time-column", default=None)
    f.add_argument("--modes", type=int, default=2, help="number of oscillatory modes K")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", help="write the fitted model as JSON")
    f.set_defaults(func=cmd_fit_closed)

    s = sub.add_parser("spectrum", help="eigenvalues and solution form of a matrix")
    s.add_argument("--matrix", required=True, help="headerless CSV, d rows by d columns")
    s.add_argument("--out", default="spectrum.json")
    s.set_defaults(func=cmd_spectrum)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SeriesError, EigenNonConvergence, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
