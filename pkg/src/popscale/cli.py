"""Command-line interface: instance files, analyses and JSON/CSV reports."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

from .chain import CAP_ENV, CapExceeded, build_lumped_chain, build_one_plus_one_chain, build_population_chain
from .instances import BUILTINS, Problem, builtin
from .model import InstanceError, build_knapsack_instance, build_tabular_instance
from .operators import KernelError, SelectionConfigError, bitwise_rejection_mutation, mix_with_global, selection_rule, tabular_mutation
from .scalability import (
    DEFAULT_K_MAX,
    bridge_analysis,
    build_chains,
    check_prop2_conditions,
    check_theorem2,
    check_theorem3,
    check_theorem4_necessary,
    scalability_report,
)
from .sim import INITS, SimConfig, estimate
from .spectral import analyze, argmax_self_transition

SCHEMA_VERSION = 1
EXIT_OK, EXIT_PARSE, EXIT_CAP, EXIT_VERIFY = 0, 2, 3, 4


class ParseError(Exception):
    pass


# ---------------------------------------------------------------------------
# instance files


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_builtin_spec(text: str) -> tuple[str, dict]:
    """``NAME[:key=value,...]``, e.g. ``paper-table12:eps=0.01``."""
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"builtin parameter {item!r} is not key=value")
        params[key.strip()] = _parse_value(value.strip())
    return name.strip(), params


def problem_from_document(doc: Any) -> Problem:
    if not isinstance(doc, dict):
        raise ParseError("instance file must hold a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    kind = doc.get("kind")
    present = [k for k in ("tabular", "knapsack", "builtin") if k in doc]
    if kind not in ("tabular", "knapsack", "builtin"):
        raise ParseError(f"field 'kind' must be tabular, knapsack or builtin, got {kind!r}")
    if present != [kind]:
        raise ParseError(f"exactly the section {kind!r} must be present, found {present}")
    body = doc[kind]
    try:
        if kind == "tabular":
            if "mutation" not in body:
                raise ParseError("tabular.mutation is missing")
            inst = build_tabular_instance(body)
            kernel = tabular_mutation(body["mutation"], inst)
            problem = Problem(inst, kernel, {})
        elif kind == "knapsack":
            missing = [k for k in ("n", "values", "weights", "capacity") if k not in body]
            if missing:
                raise ParseError(f"knapsack fields missing: {missing}")
            n = int(body["n"])
            inst = build_knapsack_instance(n, body["values"], body["weights"], float(body["capacity"]),
                                           name=str(body.get("name", "knapsack")))
            p = float(body.get("flip_prob", 1.0 / n))
            problem = Problem(inst, bitwise_rejection_mutation(inst, p), {"n": n, "flip_prob": p})
        else:
            if isinstance(body, str):
                name, params = parse_builtin_spec(body)
            else:
                name, params = body.get("name"), dict(body.get("params", {}))
            problem = builtin(name, **params)
    except KernelError as exc:
        raise ParseError(f"{kind}.mutation: {exc}") from None
    except InstanceError as exc:
        raise ParseError(f"{kind}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{kind}: {exc}") from None
    eps = doc.get("global_mix")
    if eps is not None:
        try:
            kernel = mix_with_global(problem.kernel, float(eps))
        except KernelError as exc:
            raise ParseError(f"global_mix: {exc}") from None
        problem = Problem(problem.instance, kernel, {**problem.params, "global_mix": float(eps)})
    return problem


def load_problem(source: str) -> Problem:
    """A JSON instance file, or ``builtin:NAME[:k=v,...]``."""
    if source.startswith("builtin:"):
        name, params = parse_builtin_spec(source[len("builtin:"):])
        try:
            return builtin(name, **params)
        except (InstanceError, KernelError) as exc:
            raise ParseError(str(exc)) from None
    try:
        text = Path(source).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {source}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return problem_from_document(doc)


# ---------------------------------------------------------------------------
# output


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    return str(obj)


def dumps(report: dict) -> str:
    # float repr is the shortest round-tripping decimal, so re-reading is exact
    return json.dumps(_jsonable(report), indent=2, allow_nan=True) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(report: dict, out: str | None) -> None:
    text = dumps(report)
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _inputs(args, problem: Problem, **extra) -> dict:
    return {"instance": args.instance, "name": problem.instance.name, "params": problem.params,
            "states": problem.instance.size, "multiplicity_total": problem.instance.effective_size, **extra}


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    problem = load_problem(args.instance)
    inst, kernel = problem.instance, problem.kernel
    rule = selection_rule(args.selection)
    if args.mu == 1:
        ts = build_one_plus_one_chain(inst, kernel)
    elif args.method == "lumped" or (args.method == "auto" and rule.best_determined):
        ts = build_lumped_chain(inst, kernel, rule, args.mu)
    else:
        ts = build_population_chain(inst, kernel, rule, args.mu)
    rep = analyze(ts)
    spectral = rep.as_dict()
    spectral["chain"] = ts.kind
    if rep.m is not None and ts.n <= 64:
        spectral["m"] = {_state_label(inst, s): float(v) for s, v in zip(ts.states, rep.m)}
    if args.mu == 1:
        spectral["x_rho"] = inst.labels[argmax_self_transition(ts)]
    report = {"inputs": _inputs(args, problem, mu=args.mu, selection=rule.kind, method=args.method),
              "spectral": {str(args.mu): spectral}}
    emit(report, args.out)
    return EXIT_OK


def _state_label(inst, s) -> str:
    if isinstance(s, int):
        return inst.labels[s]
    members = ",".join(inst.labels[m] for m in s.members)
    return f"({members})@{inst.labels[s.best]}"


def cmd_scale(args) -> int:
    problem = load_problem(args.instance)
    rule = selection_rule(args.selection)
    if args.mu_max < 2:
        raise ParseError("--mu-max must be >= 2")
    rows = []
    spectral = {}
    for mu in range(2, args.mu_max + 1):
        rep = scalability_report(problem.instance, problem.kernel, rule, mu, method=args.method)
        rows.append(rep.as_dict())
        spectral.setdefault("1", rep.one.as_dict())
        spectral[str(mu)] = rep.many.as_dict()
    report = {"inputs": _inputs(args, problem, mu_max=args.mu_max, selection=rule.kind, method=args.method),
              "spectral": spectral, "scalability": rows,
              "superlinear_mu": [r["mu"] for r in rows if r["superlinear"]]}
    if args.check_conditions:
        report["checks"] = {str(mu): check_prop2_conditions(problem.instance, problem.kernel, mu, rule)
                            .as_dict(problem.instance) for mu in range(2, args.mu_max + 1)}
    emit(report, args.out)
    if args.csv:
        buf = io.StringIO()
        fields = ["mu", "rho_scal", "inf_scal", "a_scal", "a_hat_scal", "rho_class", "superlinear"]
        w = csv.DictWriter(buf, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({"mu": r["mu"], "rho_scal": r["rho_scal"], "inf_scal": r["inf_scal"],
                        "a_scal": r["a_scal"], "a_hat_scal": r["a_hat_scal"],
                        "rho_class": r["classification"]["rho"], "superlinear": r["superlinear"]})
        write_atomic(args.csv, buf.getvalue())
    return EXIT_OK


def cmd_landscape(args) -> int:
    problem = load_problem(args.instance)
    analysis = bridge_analysis(problem.instance, problem.kernel)
    report = {"inputs": _inputs(args, problem), "bridge": analysis.as_dict(problem.instance)}
    if not args.out:
        print(analysis.landscape, file=sys.stderr)
    emit(report, args.out)
    return EXIT_OK


def cmd_roads(args) -> int:
    problem = load_problem(args.instance)
    inst, kernel = problem.instance, problem.kernel
    rule = selection_rule(args.selection)
    chains = build_chains(inst, kernel, rule, args.mu, args.method)
    t2 = check_theorem2(inst, kernel, rule, args.mu, args.k_max, chains=chains)
    checks = {"theorem2": t2.as_dict()}
    if rule.elitist:
        full = chains if chains[1].kind == "population" else build_chains(inst, kernel, rule, args.mu, "full")
        checks["theorem3"] = check_theorem3(inst, kernel, rule, args.mu, args.k_max, chains=full).as_dict(inst)
        checks["theorem4"] = check_theorem4_necessary(inst, kernel, rule, args.mu, args.k_max).as_dict(inst)
    report = {"inputs": _inputs(args, problem, mu=args.mu, selection=rule.kind, k_max=args.k_max),
              "checks": checks}
    emit(report, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    problem = load_problem(args.instance)
    inst = problem.instance
    rule = selection_rule(args.selection)
    start = None
    if args.init == "fixed":
        labels = args.start or [inst.labels[inst.non_optimal[-1]]]
        if len(labels) == 1:
            labels = labels * args.mu
        start = tuple(inst.index(s) for s in labels)
    config = SimConfig(runs=args.runs, t_cap=args.t_cap, seed=args.seed, init=args.init, start=start)
    est = estimate(inst, problem.kernel, rule, args.mu, config)
    report = {"inputs": _inputs(args, problem, mu=args.mu, selection=rule.kind, runs=args.runs,
                                seed=args.seed, t_cap=args.t_cap, init=args.init,
                                start=[inst.labels[s] for s in start] if start else None),
              "simulation": est.as_dict()}
    emit(report, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    def show(check):
        tag = "PASS" if check.ok else "FAIL"
        note = " (known discrepancy)" if check.known_discrepancy else ""
        print(f"{tag} {check.name}{note}: {check.detail}", file=sys.stderr)

    checks = run_suite(quick=args.quick, progress=show)
    failed = [c for c in checks if not c.ok]
    report = {"inputs": {"quick": args.quick}, "checks": [c.as_dict() for c in checks],
              "passed": len(checks) - len(failed), "failed": len(failed)}
    emit(report, args.out)
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popscale",
        description="Exact Markov-chain analysis of (1+1) and (mu+mu) elitist EAs.",
        epilog=f"INSTANCE is a JSON file or builtin:NAME[:k=v,...] with NAME in {sorted(BUILTINS)}. "
               f"Set {CAP_ENV} to change the state-space cap.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mu=True, selection=True):
        p.add_argument("instance")
        if mu:
            p.add_argument("--mu", type=_positive, default=1)
        if selection:
            p.add_argument("--selection", default="replicate_best",
                           help="replicate_best, elitist_proportional or elitist_truncation")
        p.add_argument("--out", help="write the JSON report here instead of stdout")

    p = sub.add_parser("analyze", help="spectral quantities of one chain")
    common(p)
    p.add_argument("--method", choices=("auto", "full", "lumped"), default="auto")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scale", help="scalability sweep over mu = 2..mu-max")
    common(p, mu=False)
    p.add_argument("--mu-max", type=int, required=True)
    p.add_argument("--method", choices=("auto", "full", "lumped"), default="auto")
    p.add_argument("--csv", help="also write the sweep table as CSV")
    p.add_argument("--check-conditions", action="store_true",
                   help="evaluate the sufficient conditions for superlinear scaling at each mu")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("landscape", help="bridgeable points and landscape class")
    common(p, mu=False, selection=False)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("roads", help="road-condition checks")
    common(p)
    p.add_argument("--k-max", type=_positive, default=DEFAULT_K_MAX)
    p.add_argument("--method", choices=("auto", "full", "lumped"), default="auto")
    p.set_defaults(func=cmd_roads)

    p = sub.add_parser("simulate", help="Monte Carlo estimate of hitting times")
    common(p)
    p.add_argument("--runs", type=_positive, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-cap", type=_positive, default=100_000)
    p.add_argument("--init", choices=INITS, default="fixed")
    p.add_argument("--start", nargs="+", help="initial population labels (one label is repeated mu times)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the built-in self-check suite")
    p.add_argument("--quick", action="store_true", help="smaller random samples")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapExceeded as exc:
        print(f"popscale: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ParseError, InstanceError, KernelError, SelectionConfigError) as exc:
        print(f"popscale: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
