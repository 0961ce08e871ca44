"""Command-line entry points: run a manifest, check invariants, re-render reports.

Exit codes: 0 success, 1 experiment/invariant failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .manifest import ManifestError, parse_config


def _cmd_run(args) -> int:
    try:
        man = parse_config(args.manifest)
    except ManifestError as exc:
        print("configuration error:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    from .experiments import run_experiment

    record, summary = run_experiment(man)
    print(f"experiment {man.name!r} ({man.kind}) finished in {record.wall_time:.2f}s")
    for f in record.result_files:
        print(f"  wrote {os.path.join(man.output_dir, f)}")
    if summary.get("passed") is False:
        print("result: FAIL")
        return 1
    return 0


def _cmd_check(args) -> int:
    from .experiments import run_invariant_suite

    results = run_invariant_suite(seed=args.seed, quick=not args.full)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} invariant checks passed")
    return 0 if failed == 0 else 1


def _cmd_report(args) -> int:
    from .reporting import read_csv, line_figure, write_json

    rendered = []
    for name in sorted(os.listdir(args.directory)):
        if not name.endswith(".csv"):
            continue
        path = os.path.join(args.directory, name)
        header, rows = read_csv(path)
        if not rows:
            continue
        numeric = [i for i, h in enumerate(header)
                   if all(isinstance(r[i], float) for r in rows)]
        if len(numeric) < 2:
            continue
        xcol = numeric[0]
        x = [r[xcol] for r in rows]
        ys = {header[i]: [r[i] for r in rows] for i in numeric[1:4]}
        out = os.path.join(args.directory, name[:-4] + ".svg")
        try:
            line_figure(out, x, ys, header[xcol], "value", name[:-4])
            rendered.append(os.path.basename(out))
        except Exception as exc:  # noqa: BLE001 - report and continue
            print(f"could not render {name}: {exc}", file=sys.stderr)
    write_json(os.path.join(args.directory, "report_index.json"),
               {"rendered": rendered})
    print(f"rendered {len(rendered)} figure(s) in {args.directory}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hydrokam",
        description="experiments for singular diffusion, its metric/entropy "
                    "structure, control, kinetic particles and cell problems")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment manifest (JSON)")
    p_run.add_argument("manifest")
    p_run.set_defaults(fn=_cmd_run)

    p_check = sub.add_parser("check", help="run the invariant suite")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--full", action="store_true",
                         help="larger sample sizes (slower)")
    p_check.set_defaults(fn=_cmd_check)

    p_rep = sub.add_parser("report", help="re-render figures for a results directory")
    p_rep.add_argument("directory")
    p_rep.set_defaults(fn=_cmd_report)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
