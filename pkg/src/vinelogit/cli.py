"""Command-line entry point: ``fit``, ``predict``, ``simulate`` and ``bench``.

Exit codes: 0 success, 2 input could not be parsed, 3 fitting failed,
4 invalid flags or scenario.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import modelio
from .copulas import CopulaFamily
from .data import DataError, parse_column_decl, read_csv, read_schema, write_csv
from .estimation import EstimationError, log_odds, parameter_names
from .margins import ConversionError
from .selection import SelectConfig, select_model
from .simbench import (
    BENCH_COLUMNS,
    SpecError,
    aggregate,
    benchmark,
    format_value,
    load_scenario,
    Scenario,
    simulate,
)

EXIT_OK, EXIT_PARSE, EXIT_FIT, EXIT_FLAGS = 0, 2, 3, 4

log = logging.getLogger("vinelogit")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_FLAGS, message)


def _families(text: str) -> tuple:
    try:
        fams = tuple(CopulaFamily.parse(f) for f in text.split(",") if f.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return fams


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vinelogit", description="Logistic regression extended with vine copula terms.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="select and fit a model on a training CSV")
    fit.add_argument("train", help="training CSV (header row, comma separated)")
    fit.add_argument("--col", action="append", default=[], metavar="NAME:KIND",
                     help="column declaration; kind is continuous, binary, count, categorical or response")
    fit.add_argument("--schema", help="file with one NAME:KIND declaration per line")
    fit.add_argument("--tau", type=_nonneg_float, default=2.0, help="log-likelihood gain threshold (default 2)")
    fit.add_argument("--max-trees", type=_pos_int, default=4, help="truncation level K (default 4)")
    fit.add_argument("--families", type=_families, default=(CopulaFamily.GAUSSIAN, CopulaFamily.CLAYTON,
                                                             CopulaFamily.GUMBEL),
                     help="comma-separated copula families (default gaussian,clayton,gumbel)")
    fit.add_argument("--out", required=True, help="model JSON to write")

    pred = sub.add_parser("predict", help="score a CSV with a fitted model")
    pred.add_argument("model", help="model JSON written by fit")
    pred.add_argument("data", help="CSV holding the model's columns (matched by name)")
    pred.add_argument("--out", help="output CSV (default stdout)")

    for name, text in (("simulate", "write a simulated dataset"), ("bench", "run a benchmark scenario")):
        p = sub.add_parser(name, help=text)
        p.add_argument("scenario", nargs="?", help="scenario TOML file (defaults apply when omitted)")
        p.add_argument("--model-id", type=int, help="simulation model 1-5")
        p.add_argument("--strength", choices=("strong", "weak"))
        p.add_argument("--p", type=_pos_int, help="number of covariates")
        p.add_argument("--n", type=_pos_int, help="training rows")
        p.add_argument("--seed", type=_seed)
        p.add_argument("--out", help="output CSV (default stdout)")
        if name == "bench":
            p.add_argument("--replicates", type=_pos_int)
            p.add_argument("--n-test", type=_pos_int, help="test rows per replicate")
            p.add_argument("--methods", type=lambda s: tuple(m.strip() for m in s.split(",") if m.strip()),
                           help="comma-separated subset of coplr,linlr,nb")
            p.add_argument("--tau", type=_nonneg_float)
            p.add_argument("--max-trees", type=_pos_int)
    return parser


@contextlib.contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _declarations(args) -> dict[str, str]:
    decls: dict[str, str] = {}
    try:
        if args.schema:
            decls.update(read_schema(args.schema))
        for text in args.col:
            name, kind = parse_column_decl(text)
            decls[name] = kind
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read schema: {exc}") from exc
    except DataError as exc:
        raise CliError(EXIT_FLAGS, str(exc)) from exc
    if not decls:
        raise CliError(EXIT_FLAGS, "no column declarations; use --col NAME:KIND or --schema FILE")
    return decls


def _summary(report, data, out) -> None:
    prm = report.params
    edges = prm.structure.edges
    names = data.names
    print(f"{len(edges)} copula terms", file=out)
    for e in edges:
        j, k = e.conditioned
        given = ",".join(names[i] for i in sorted(e.conditioning))
        pair = f"{names[j]},{names[k]}" + (f" | {given}" if given else "")
        print(f"  tree {e.tree}: ({pair})  class 0: {e.cop0}  class 1: {e.cop1}", file=out)
    se = report.std_errors
    labels = parameter_names(prm, names)
    print("coefficients:", file=out)
    for i, b in enumerate(prm.beta):
        s = f"{se[i]:.6g}" if se is not None else "n/a"
        print(f"  {labels[i]:<24} {b: .6g}  (se {s})", file=out)
    if se is None:
        print("  standard errors unavailable: observed information is not positive definite", file=out)
    print(f"log-likelihood: {report.loglik:.10g}", file=out)
    print("trace:", file=out)
    for t in report.trace:
        print(f"  {t.loglik:.10g}  {t.step}", file=out)


def cmd_fit(args) -> int:
    decls = _declarations(args)
    try:
        data, levels = read_csv(args.train, decls)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {args.train}: {exc}") from exc
    except DataError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    try:
        config = SelectConfig(tau=args.tau, max_trees=args.max_trees, families=args.families)
    except ValueError as exc:
        raise CliError(EXIT_FLAGS, str(exc)) from exc
    try:
        report = select_model(data, config)
    except (EstimationError, ConversionError, ValueError) as exc:
        raise CliError(EXIT_FIT, f"fit failed: {exc}") from exc
    header = _header(args.train)
    columns = [(n, decls[n]) for n in header]
    doc = modelio.build_document(report, data, columns, levels, args.tau, args.max_trees, config.families)
    Path(args.out).write_text(modelio.dumps(doc), encoding="utf-8")
    _summary(report, data, sys.stdout)
    return EXIT_OK


def _header(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [h.strip() for h in next(csv.reader(fh))]


def cmd_predict(args) -> int:
    try:
        doc = modelio.loads(Path(args.model).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {args.model}: {exc}") from exc
    except modelio.DocumentError as exc:
        raise CliError(EXIT_PARSE, f"{args.model}: {exc}") from exc
    params = modelio.to_params(doc)
    try:
        data, _ = read_csv(args.data, modelio.declarations(doc), response_required=False, levels=doc["levels"],
                           ignore_undeclared=True)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {args.data}: {exc}") from exc
    except DataError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    design = list(doc["design"])
    if sorted(data.names) != sorted(design):
        raise CliError(EXIT_PARSE, f"design columns {list(data.names)} do not match the model's {design}")
    X = data.X[:, [data.names.index(n) for n in design]]
    eta = np.asarray(log_odds(params, X), dtype=float)
    # keep probabilities strictly inside (0, 1) where expit rounds to 0 or 1
    prob = np.clip(expit(eta), np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "log_odds", "prob"])
        for i, (e, p) in enumerate(zip(eta, prob)):
            w.writerow([i, format_value(float(e)), format_value(float(p))])
    return EXIT_OK


def _scenario(args) -> Scenario:
    overrides = {
        "model_id": args.model_id,
        "strength": args.strength,
        "p": args.p,
        "n": args.n,
        "seed": args.seed,
        "replicates": getattr(args, "replicates", None),
        "n_test": getattr(args, "n_test", None),
        "methods": getattr(args, "methods", None),
        "tau": getattr(args, "tau", None),
        "max_trees": getattr(args, "max_trees", None),
    }
    try:
        if args.scenario:
            return load_scenario(args.scenario, **overrides)
        return Scenario(**{k: v for k, v in overrides.items() if v is not None})
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read scenario: {exc}") from exc
    except (SpecError, ValueError, TypeError) as exc:
        raise CliError(EXIT_FLAGS, f"invalid scenario: {exc}") from exc


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    try:
        spec = scenario.spec()
    except (SpecError, ValueError) as exc:
        raise CliError(EXIT_FLAGS, f"invalid scenario: {exc}") from exc
    data = simulate(spec, scenario.n, scenario.seed)
    if args.out:
        write_csv(args.out, data)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(list(data.names) + ["y"])
        for row, label in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    return EXIT_OK


def cmd_bench(args) -> int:
    scenario = _scenario(args)
    try:
        results = benchmark(scenario)
    except (SpecError, ValueError) as exc:
        raise CliError(EXIT_FLAGS, f"invalid scenario: {exc}") from exc
    rows = aggregate(results)
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    failed = sum(r.failures for r in rows)
    if failed:
        log.warning("%d method fits failed and were excluded from the means", failed)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"vinelogit: error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"vinelogit: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
