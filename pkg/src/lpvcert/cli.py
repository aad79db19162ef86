"""Command-line entry point.

Exit codes: 0 feasible / pass, 1 infeasible / fail, 2 inconclusive, 3 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .conditions import CONDITIONS, LMI_CONDITIONS, Certificate, solve_condition
from .gains import RECIPE_OF, GainSchedule, gain_from_certificate
from .lpv import is_affine_family, system_from_dict
from .report import BracketError, NonMonotoneError, bisect_gamma, run_report
from .sdpfeas import FEASIBLE, INFEASIBLE
from .verify import monte_carlo_descent

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _read_system_dict(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"system file {path} not found")
    d = json.loads(p.read_text())
    if d.get("schema_version", 1) != 1:
        raise UsageError(f"unsupported system schema version {d.get('schema_version')}")
    return d


def _system(path, gamma):
    d = _read_system_dict(path)
    if gamma is not None and not is_affine_family(d):
        raise UsageError("--gamma given but the system has no radius parameter")
    return system_from_dict(d, gamma)


def _condition(c: str) -> str:
    if c not in LMI_CONDITIONS:
        raise UsageError(f"unknown condition {c!r}; choose from {', '.join(LMI_CONDITIONS)}")
    return c


def _finite(obj):
    # strict JSON has no inf / nan
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _emit(obj) -> None:
    print(json.dumps(_finite(obj), indent=1))


def _status_code(status: str) -> int:
    return {FEASIBLE: EXIT_OK, INFEASIBLE: EXIT_FAIL}.get(status, EXIT_INCONCLUSIVE)


def cmd_analyze(a) -> int:
    system = _system(a.system, a.gamma)
    out, cert = solve_condition(_condition(a.condition), system, a.eps, gamma=a.gamma)
    _emit({"condition": a.condition, "gamma": a.gamma, "verdict": out.status,
           "margin": out.margin, "upper_bound": out.upper_bound, "solver": out.solver,
           "diagnostic": out.diagnostic})
    if cert is not None and a.cert_out:
        cert.save(a.cert_out)
    return _status_code(out.status)


def cmd_bisect(a) -> int:
    d = _read_system_dict(a.system)
    if not is_affine_family(d):
        raise UsageError("bisection needs a system with a radius parameter (affine_scalar parts)")
    try:
        res = bisect_gamma(_condition(a.condition), d, a.lo, a.hi, a.tol, eps=a.eps)
    except BracketError as e:
        print(str(e), file=sys.stderr)
        return EXIT_FAIL
    except NonMonotoneError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INCONCLUSIVE
    _emit(res.to_dict())
    return EXIT_OK


def cmd_gains(a) -> int:
    cond = _condition(a.condition)
    if cond not in RECIPE_OF:
        raise UsageError(f"condition {cond!r} has no gain recipe")
    system = _system(a.system, a.gamma)
    out, cert = solve_condition(cond, system, a.eps, gamma=a.gamma)
    if cert is None:
        _emit({"condition": cond, "gamma": a.gamma, "verdict": out.status, "margin": out.margin})
        return _status_code(out.status)
    gain = gain_from_certificate(system, cert)
    gain.save(a.out)
    cert_path = a.cert_out or str(Path(a.out).with_suffix("")) + ".cert.json"
    cert.save(cert_path)
    _emit({"condition": cond, "gamma": a.gamma, "verdict": out.status, "margin": out.margin,
           "kind": gain.kind, "recipe": gain.recipe, "gain": a.out, "certificate": cert_path})
    return EXIT_OK


def cmd_verify(a) -> int:
    if not Path(a.cert).exists():
        raise UsageError(f"certificate file {a.cert} not found")
    cert = Certificate.load(a.cert)
    gamma = a.gamma if a.gamma is not None else cert.gamma
    d = _read_system_dict(a.system)
    system = system_from_dict(d, gamma if is_affine_family(d) else None)
    if a.gain:
        if not Path(a.gain).exists():
            raise UsageError(f"gain file {a.gain} not found")
        gain = GainSchedule.load(a.gain, system)
    elif cert.condition in RECIPE_OF:
        gain = gain_from_certificate(system, cert)
    elif cert.condition.startswith("polyqs_"):
        gain = None
    else:
        raise UsageError(f"a {cert.condition} certificate carries no Lyapunov function to verify")
    rep = monte_carlo_descent(system, cert, gain, num_seq=a.samples, horizon=a.horizon,
                              seed=a.seed, a3=a.a3, grid_points=a.grid_points)
    d = rep.to_dict()
    if not a.full:
        d.pop("vertex_margins")
    _emit(d)
    if a.report_out:
        rep.save(a.report_out)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(a) -> int:
    if not Path(a.config).exists():
        raise UsageError(f"config file {a.config} not found")
    summary = run_report(a.config, a.out_dir)
    _emit(summary)
    ok = all(o["holds"] for o in summary.get("orderings", []))
    return EXIT_OK if ok else EXIT_FAIL


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpvcert", description="Certify poly-quadratic stability, detectability and "
                "stabilizability of polytopic LPV systems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("analyze", help="solve one condition, print verdict and margin")
    s.add_argument("--system", required=True)
    s.add_argument("--condition", required=True, choices=CONDITIONS[:-1], metavar="ID")
    s.add_argument("--gamma", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--cert-out", help="write the certificate here when feasible")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("bisect", help="largest certified radius gamma*")
    s.add_argument("--system", required=True)
    s.add_argument("--condition", required=True, choices=CONDITIONS[:-1], metavar="ID")
    s.add_argument("--lo", type=float, required=True)
    s.add_argument("--hi", type=float, required=True)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--eps", type=float)
    s.set_defaults(func=cmd_bisect)

    s = sub.add_parser("gains", help="solve and export the observer / controller gain")
    s.add_argument("--system", required=True)
    s.add_argument("--condition", required=True, choices=CONDITIONS[:-1], metavar="ID")
    s.add_argument("--gamma", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--cert-out", help="certificate path (default: <out>.cert.json)")
    s.set_defaults(func=cmd_gains)

    s = sub.add_parser("verify", help="vertex check plus Monte-Carlo descent of a certificate")
    s.add_argument("--system", required=True)
    s.add_argument("--cert", required=True)
    s.add_argument("--gain")
    s.add_argument("--gamma", type=float, help="radius (default: the one stored in the certificate)")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--horizon", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--a3", type=float, help="required decrease rate (default derived from the margin)")
    s.add_argument("--grid-points", type=int, help="grid points per axis for preview gains")
    s.add_argument("--full", action="store_true", help="include every vertex margin")
    s.add_argument("--report-out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", help="radius, decision-variable and timing tables from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "samples", 1) < 1 or getattr(args, "horizon", 1) < 1:
        print("lpvcert: error: --samples and --horizon must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"lpvcert: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
