"""Command-line interface.

Exit codes: 0 success, 2 bad input or configuration, 3 infeasible allocation,
4 eigensolver or optimiser failed to converge.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, InfeasibleError, MeasGroupError, ParseError
from .grouping import extend_overlap, group_lf, group_si
from .io import load_wavefunction, read_hamiltonian, save_wavefunction, write_report
from .pipeline import METHODS, MethodOptions, run_methods, sample_estimator, variable_counts
from .statevector import ground_state

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_CONVERGENCE = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _methods(text):
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"methods must come from {','.join(METHODS)}")
    return [m for m in METHODS if m in names]


def build_parser():
    parser = argparse.ArgumentParser(prog="measgroup", description="Measurement grouping and allocation for qubit Hamiltonians.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, relation=True):
        p.add_argument("hamiltonian", help="Hamiltonian file or fixture name (fig1, h2, lih, beh2, h2o, nh3)")
        if relation:
            p.add_argument("--relation", choices=("qwc", "fc"), default="qwc")
        p.add_argument("--format", choices=("json", "table"), default="json")
        p.add_argument("--output", "-o", help="write the report here instead of stdout")

    def state_opts(p):
        p.add_argument("--wavefunction", default="ground", help="'ground' or a wavefunction file")
        p.add_argument("--proxy", help="wavefunction file used for optimisation; variances are evaluated on --wavefunction")

    def optimiser_opts(p):
        p.add_argument("--ima-cycles", type=int, default=10)
        p.add_argument("--gma-steps", type=int, default=500)
        p.add_argument("--gma-learning-rate", type=float, default=1.0)
        p.add_argument("--ics-max-outer", type=int, default=100)
        p.add_argument("--ics-tol", type=float, default=1e-6)
        p.add_argument("--ics-max-free", type=int, default=None)

    p = sub.add_parser("group", help="group terms and count optimisation variables")
    common(p)
    p.add_argument("--method", choices=("si", "lf"), default="si")
    p.add_argument("--show-groups", action="store_true")

    p = sub.add_parser("variance", help="analytic estimator variance per method")
    common(p)
    state_opts(p)
    optimiser_opts(p)
    p.add_argument("--methods", type=_methods, default=list(METHODS))
    p.add_argument("--trace", action="store_true", help="include optimiser traces")
    p.add_argument("--timings", action="store_true", help="include wall times (makes output non-reproducible)")

    p = sub.add_parser("sample", help="simulate measurements and compare with the analytic variance")
    common(p)
    state_opts(p)
    optimiser_opts(p)
    p.add_argument("--method", choices=METHODS, default="si")
    p.add_argument("--shots", type=int, default=10000)
    p.add_argument("--repetitions", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="Clifford rotations for every group")
    common(p)
    p.add_argument("--method", choices=("si", "lf"), default="si")

    p = sub.add_parser("ground", help="ground state by Lanczos")
    common(p, relation=False)
    p.add_argument("--save", help="write the ground-state wavefunction to this file")
    p.add_argument("--tol", type=float, default=1e-8)
    return parser


def _load(args):
    try:
        return read_hamiltonian(args.hamiltonian)
    except (FileNotFoundError, ParseError) as err:
        raise ConfigError(f"{args.hamiltonian}: {err}") from None


def _state(h, source):
    if source == "ground":
        return ground_state(h)[1]
    return load_wavefunction(source, h.n_qubits)


def _options(args):
    return MethodOptions(args.ima_cycles, args.gma_steps, args.gma_learning_rate,
                         args.ics_max_outer, args.ics_tol, args.ics_max_free)


def cmd_group(args):
    h = _load(args)
    base = group_si(h, args.relation) if args.method == "si" else group_lf(h, args.relation)
    report = {"command": "group", "hamiltonian": str(args.hamiltonian), "relation": args.relation,
              "grouping": args.method, "n_qubits": h.n_qubits, **variable_counts(h, args.relation),
              "n_groups": base.n_groups}
    if args.show_groups:
        report["groups"] = base.to_dict()["groups"]
        report["overlapping_groups"] = extend_overlap(h, group_si(h, args.relation)).to_dict()["groups"]
    return report, EXIT_OK


def cmd_variance(args):
    h = _load(args)
    state = _state(h, args.wavefunction)
    proxy = load_wavefunction(args.proxy, h.n_qubits) if args.proxy else None
    start = time.perf_counter()
    results = run_methods(h, state, args.relation, args.methods, _options(args), proxy)
    methods = {}
    code = EXIT_OK
    for name, res in results.items():
        entry = res.to_dict(trace=args.trace)
        if args.timings and res.trace is not None:
            entry["wall_time"] = res.trace.entries[-1].wall_time
        methods[name] = entry
        if res.error_kind == "infeasible":
            code = max(code, EXIT_INFEASIBLE)
        elif res.error_kind == "convergence":
            code = EXIT_CONVERGENCE
    report = {"command": "variance", "hamiltonian": str(args.hamiltonian), "relation": args.relation,
              "n_qubits": h.n_qubits, "n_terms": h.n_terms, "methods": methods}
    if args.timings:
        report["wall_time"] = time.perf_counter() - start
    return report, code


def cmd_sample(args):
    h = _load(args)
    state = _state(h, args.wavefunction)
    proxy = load_wavefunction(args.proxy, h.n_qubits) if args.proxy else None
    if args.shots < 0 or args.repetitions < 1:
        raise ConfigError("shots must be non-negative and repetitions positive")
    res = run_methods(h, state, args.relation, [args.method], _options(args), proxy)[args.method]
    if not res.ok:
        raise InfeasibleError(res.error) if res.error_kind == "infeasible" else ConvergenceError(res.error)
    rep = sample_estimator(res, state, args.shots, args.repetitions, args.seed)
    report = {"command": "sample", "hamiltonian": str(args.hamiltonian), "relation": args.relation,
              "seed": args.seed, "methods": {args.method: {**rep.to_dict(), "estimator": res.estimator}}}
    return report, EXIT_OK


def cmd_synth(args):
    from .clifford import synthesize

    h = _load(args)
    frags = group_si(h, args.relation) if args.method == "si" else group_lf(h, args.relation)
    groups = []
    for a in range(frags.n_groups):
        fragment = frags.fragment(a)
        dg = synthesize([p for _, p in fragment], [c for c, _ in fragment])
        entry = dg.to_dict()
        entry["z_poly"] = [[c, str(z)] for c, z in dg.z_poly]
        groups.append(entry)
    report = {"command": "synth", "hamiltonian": str(args.hamiltonian), "relation": args.relation,
              "n_groups": frags.n_groups, "groups": groups}
    return report, EXIT_OK


def cmd_ground(args):
    h = _load(args)
    energy, state = ground_state(h, tol=args.tol)
    if args.save:
        save_wavefunction(state, args.save)
    report = {"command": "ground", "hamiltonian": str(args.hamiltonian), "n_qubits": h.n_qubits,
              "n_terms": h.n_terms, "energy": energy}
    return report, EXIT_OK


COMMANDS = {"group": cmd_group, "variance": cmd_variance, "sample": cmd_sample,
            "synth": cmd_synth, "ground": cmd_ground}


def format_table(report):
    lines = []
    for key in sorted(k for k in report if k != "methods" and not isinstance(report[k], (list, dict))):
        lines.append(f"{key:<22} {report[key]}")
    methods = report.get("methods") or {}
    if methods:
        cols = sorted({k for v in methods.values() for k, val in v.items() if np.isscalar(val)})
        lines.append("")
        lines.append("method  " + "  ".join(f"{c:>16}" for c in cols))
        for name, row in methods.items():
            cells = []
            for c in cols:
                val = row.get(c, "")
                cells.append(f"{val:>16.6g}" if isinstance(val, float) else f"{str(val):>16}")
            lines.append(f"{name:<7} " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        report, code = COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as err:
        print(f"no convergence: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (MeasGroupError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    text = write_report(report) if args.format == "json" else format_table(report)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
