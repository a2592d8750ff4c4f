"""Command-line front end.

Exit codes: 0 success, 1 input/schema error, 2 I/O error, 3 numerical abort.
Set ``CARTIMP_LOG_LEVEL`` (e.g. ``DEBUG``) for more logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .errors import CartImpError, NonFiniteStateError, SingularMassMatrixError
from .model import dump_json, extract_chain, model_to_dict, parse_robot_description
from .sim import (
    flatten_keys,
    load_scenario,
    resolve_parameter,
    run_scenario,
    steady_state_report,
    write_csv,
    write_ndjson,
)

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cartimp")


def _error(msg):
    print(f"error: {msg}", file=sys.stderr)


def cmd_validate(args):
    try:
        with open(args.model, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        _error(f"cannot read {args.model}: {exc.strerror or exc}")
        return EXIT_IO
    try:
        model = parse_robot_description(text)
    except CartImpError as exc:
        _error(str(exc))
        return EXIT_INPUT

    print(f"robot '{model.name}': {len(model.links)} links, {len(model.joints)} joints, root '{model.root}'")
    for link in model.links:
        print(f"  link {link.name:<20} mass {link.mass:g} kg")
    for j in model.joints:
        limits = ""
        if j.lower is not None:
            limits += f" position [{j.lower:g}, {j.upper:g}] rad"
        if j.effort is not None:
            limits += f" effort {j.effort:g} N·m"
        print(f"  joint {j.name:<19} {j.kind:<8} {j.parent} -> {j.child}{limits}")
    if args.tip:
        tips = [args.tip]
    else:
        tips = model.leaves
    base = args.base or model.root
    status = EXIT_OK
    for tip in tips:
        try:
            chain = extract_chain(model, base, tip)
        except CartImpError as exc:
            if args.tip:
                _error(str(exc))
                status = EXIT_INPUT
            continue
        print(f"chain {base} -> {tip}: n={chain.n} ({', '.join(chain.joint_names)})")
    for w in model.warnings:
        log.info("warning: %s", w)
    if model.warnings:
        print(f"{len(model.warnings)} unsupported elements ignored")

    if args.dump_model:
        text = dump_json(model_to_dict(model)) + "\n"
        if args.dump_model == "-":
            sys.stdout.write(text)
        else:
            try:
                with open(args.dump_model, "w", encoding="utf-8") as fh:
                    fh.write(text)
            except OSError as exc:
                _error(f"cannot write {args.dump_model}: {exc.strerror or exc}")
                return EXIT_IO
    return status


def _load(path_or_doc, base_dir=None):
    """Load a scenario, mapping failures to exit codes. Returns (scenario, code)."""
    try:
        return load_scenario(path_or_doc, base_dir=base_dir), EXIT_OK
    except OSError as exc:
        _error(f"cannot read {getattr(exc, 'filename', None) or path_or_doc}: {exc.strerror or exc}")
        return None, EXIT_IO
    except CartImpError as exc:
        _error(str(exc))
        return None, EXIT_INPUT


def _simulate(scenario):
    try:
        return run_scenario(scenario), EXIT_OK
    except (NonFiniteStateError, SingularMassMatrixError) as exc:
        last = getattr(exc, "record", None)
        t = last.t if last is not None else getattr(exc, "t", None)
        _error(f"numerical abort: {exc} (last good t={t})")
        return None, EXIT_NUMERIC
    except CartImpError as exc:
        _error(str(exc))
        return None, EXIT_INPUT


def cmd_run(args):
    scenario, code = _load(args.scenario)
    if scenario is None:
        return code
    records, code = _simulate(scenario)
    if records is None:
        return code
    writer = write_csv if args.format == "csv" else write_ndjson
    try:
        writer(records, args.output)
    except OSError as exc:
        _error(f"cannot write {args.output}: {exc.strerror or exc}")
        return EXIT_IO
    window = min(args.window, scenario.duration)
    report = steady_state_report(records, window)
    print(report.format())
    if args.json_report:
        print(json.dumps(report.as_dict()))
    return EXIT_OK


def _sweep_one(job):
    doc, base_dir, window = job
    scenario = load_scenario(doc, base_dir=base_dir)
    records = run_scenario(scenario)
    return steady_state_report(records, min(window, scenario.duration))


SWEEP_COLUMNS = (
    ["value"]
    + [f"mean_err_{s}" for s in ("x", "y", "z", "rx", "ry", "rz")]
    + ["translation_error", "rotation_error"]
    + [f"mean_f_ext_{s}" for s in ("x", "y", "z", "rx", "ry", "rz")]
)


def cmd_sweep(args):
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        _error(f"--values must be comma-separated numbers, got {args.values!r}")
        return EXIT_INPUT
    if not values:
        _error("--values is empty")
        return EXIT_INPUT
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        _error(f"cannot read {args.scenario}: {exc.strerror or exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        _error(f"scenario is not valid JSON: {exc}")
        return EXIT_INPUT
    base_dir = os.path.dirname(os.path.abspath(args.scenario))
    docs = []
    for v in values:
        try:
            docs.append(resolve_parameter(doc, args.param, v))
        except KeyError:
            known = [k[len("controller."):] if k.startswith("controller.") else k for k in flatten_keys(doc)]
            _error(f"unknown parameter {args.param!r}; known keys:\n  " + "\n  ".join(known))
            return EXIT_INPUT
    for d in docs:
        scenario, code = _load(d, base_dir)
        if scenario is None:
            return code
    jobs = [(d, base_dir, args.window) for d in docs]
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_sweep_one, jobs))
        else:
            reports = [_sweep_one(j) for j in jobs]
    except (NonFiniteStateError, SingularMassMatrixError) as exc:
        _error(f"numerical abort: {exc}")
        return EXIT_NUMERIC
    except CartImpError as exc:
        _error(str(exc))
        return EXIT_INPUT

    rows = []
    for v, r in zip(values, reports):
        rows.append([v, *r.mean_pose_error, r.translation_error, r.rotation_error, *r.mean_f_ext])
    try:
        fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    except OSError as exc:
        _error(f"cannot write {args.output}: {exc.strerror or exc}")
        return EXIT_IO
    writer = csv.writer(fh)
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([format(float(x), ".17g") for x in row])
    if args.output:
        fh.close()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="cartimp", description="Cartesian impedance control simulator")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a robot description and print a summary")
    p.add_argument("model")
    p.add_argument("--base", help="base link for the chain summary (default: root)")
    p.add_argument("--tip", help="tip link for the chain summary (default: every leaf)")
    p.add_argument("--dump-model", metavar="PATH", help="write the parsed model as JSON ('-' for stdout)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write its log")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=("csv", "ndjson"), default="csv")
    p.add_argument("--window", type=float, default=1.0, help="steady-state window in seconds")
    p.add_argument("--json-report", action="store_true", help="also print the report as one JSON line")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario once per value of a config parameter")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, help="dotted key, e.g. gains.k_ca.trans.x")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1, help="scenarios to run in parallel")
    p.add_argument("-o", "--output", help="CSV table path (default: stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("CARTIMP_LOG_LEVEL", "WARNING").upper()
    if args.verbose:
        level = "DEBUG" if args.verbose > 1 else "INFO"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
