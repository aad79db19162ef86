"""Bisection for the largest certified parameter radius, and table generation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .conditions import CONDITIONS, LMI_CONDITIONS, build, count_decision_vars, solve_condition
from .lpv import PolytopicSystem, block_diag_compose, is_affine_family, system_from_dict
from .sdpfeas import FEASIBLE, SolveOptions, solve_feasibility

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# orderings checked on the timing table: (faster, slower)
TIMING_ORDER = (("polyqs_l14", "polyqs_l12"), ("polyqs_l14", "polyqs_l13"),
                ("det_thm1", "det_rem1"), ("synth_t43", "synth_t44"))


class BracketError(ValueError):
    """The initial bracket does not straddle the feasibility threshold."""


class NonMonotoneError(RuntimeError):
    """Feasibility was observed above an infeasible radius."""

    def __init__(self, msg: str, grid: list[tuple[float, str]]):
        super().__init__(msg + ": " + ", ".join(f"{g:.6g}:{v}" for g, v in grid))
        self.grid = grid


@dataclass
class BisectionResult:
    condition: str
    gamma_star: float
    lo: float
    hi: float
    evaluations: list = field(default_factory=list)   # (gamma, verdict, margin, seconds)
    certificates: list = field(default_factory=list)  # (gamma, Certificate) when kept

    @property
    def inconclusive_count(self) -> int:
        return sum(1 for e in self.evaluations if e[1] == "inconclusive")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "condition": self.condition,
                "gamma_star": round(self.gamma_star, 4), "bracket": [self.lo, self.hi],
                "inconclusive_count": self.inconclusive_count,
                "evaluations": [{"gamma": g, "verdict": v, "margin": m, "seconds": t}
                                for g, v, m, t in self.evaluations]}


def family_from(desc) -> Callable[[float], PolytopicSystem]:
    """A ``gamma -> system`` map from a callable or an affine JSON description."""
    if callable(desc):
        return desc
    if isinstance(desc, dict):
        if not is_affine_family(desc):
            raise ValueError("system description has no gamma parameter")
        return lambda g: system_from_dict(desc, g)
    raise TypeError(f"cannot build a system family from {type(desc).__name__}")


def bisect_gamma(condition: str, family, lo: float, hi: float, tol: float = 1e-3,
                 eps: float | None = None, opts: SolveOptions | None = None, solver=None,
                 spot_checks: int = 5, keep_certificates: bool = False) -> BisectionResult:
    """Largest ``gamma`` in ``[lo, hi]`` (to ``tol``) at which ``condition`` is certified feasible.

    Inconclusive solves count as infeasible, so ``gamma_star`` is a safe lower
    bound. Before bisecting, ``spot_checks`` equispaced radii are solved and a
    feasible verdict above a non-feasible one raises ``NonMonotoneError``.
    With ``keep_certificates`` every feasible solve's certificate is stored.
    """
    if condition not in LMI_CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    if not (0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    if not tol > 0:
        raise ValueError("tol must be positive")
    fam = family_from(family)
    res = BisectionResult(condition, lo, lo, hi)
    cache: dict[float, bool] = {}

    def feasible(g: float) -> bool:
        if g not in cache:
            t0 = time.perf_counter()
            out, cert = solve_condition(condition, fam(g), eps, opts, solver, gamma=g)
            dt = time.perf_counter() - t0
            if keep_certificates and cert is not None:
                res.certificates.append((g, cert))
            res.evaluations.append((g, out.status, float(out.margin), dt))
            log.info("%s gamma=%.6g %s margin=%.3e (%.2fs)", condition, g, out.status, out.margin, dt)
            cache[g] = out.status == FEASIBLE
        return cache[g]

    if not feasible(lo):
        raise BracketError(f"bracket invalid: {condition} is not feasible at lo = {lo}")
    if feasible(hi):
        raise BracketError(f"bracket invalid: {condition} is still feasible at hi = {hi}")
    if spot_checks:
        grid = [float(g) for g in np.linspace(lo, hi, spot_checks)]
        verdicts = [feasible(g) for g in grid]
        for k in range(1, len(grid)):
            if verdicts[k] and not all(verdicts[:k]):
                raise NonMonotoneError("non-monotone, report grid",
                                       [(g, "feasible" if v else "not feasible") for g, v in zip(grid, verdicts)])
        # start from the tightest bracket the grid gives
        lo = max(g for g, v in zip(grid, verdicts) if v)
        hi = min(g for g, v in zip(grid, verdicts) if not v)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    res.gamma_star, res.lo, res.hi = lo, lo, hi
    return res


# ---------------------------------------------------------------- report

def _load_family(entry: dict, base: Path):
    if "file" in entry:
        d = json.loads((base / entry["file"]).read_text())
    else:
        d = entry["inline"]
    copies = int(entry.get("copies", 1))
    if copies > 1:
        d = {"kind": "block_diag", "parts": [d] * copies}
    return d


def _write_table(rows: list[dict], stem: Path) -> None:
    if not rows:
        return
    cols = list(rows[0])
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(str(r[c]) for c in cols) + " |" for r in rows]
    stem.with_suffix(".md").write_text("\n".join(lines) + "\n")


def run_report(config_path, out_dir, solver=None) -> dict:
    """Produce the radius table, decision-variable counts and timing table from a JSON config.

    Config keys (all optional except ``systems`` when a section needs one)::

        schema_version: 1
        systems: {name: {"file": path relative to the config} or {"inline": {...}},
                  optional "copies": k}
        bisect: [{"system", "condition", "lo", "hi", "tol"}]
        counts: [{"N", "n_x", "n_u", "n_y"}]
        timing: {"system", "repetitions", "cases": [{"condition", "gamma"}]}
    """
    config_path = Path(config_path)
    cfg = json.loads(config_path.read_text())
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema {cfg.get('schema_version')!r}")
    base = config_path.parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    systems = {}
    for name, entry in cfg.get("systems", {}).items():
        if "file" in entry and not (base / entry["file"]).exists():
            raise FileNotFoundError(f"system file {entry['file']} not found")
        systems[name] = _load_family(entry, base)

    def need_system(name):
        if name not in systems:
            raise ValueError(f"config refers to unknown system {name!r}")
        return systems[name]

    def need_condition(c):
        if c not in CONDITIONS:
            raise ValueError(f"unknown condition id {c!r}")
        return c

    summary: dict = {"schema_version": SCHEMA_VERSION}
    rows = []
    for job in cfg.get("bisect", []):
        cond = need_condition(job["condition"])
        r = bisect_gamma(cond, need_system(job["system"]), job["lo"], job["hi"],
                         job.get("tol", 1e-3), solver=solver)
        rows.append({"system": job["system"], "condition": cond, "gamma_star": f"{r.gamma_star:.4f}",
                     "lo": f"{r.lo:.6f}", "hi": f"{r.hi:.6f}", "solves": len(r.evaluations),
                     "inconclusive": r.inconclusive_count})
    _write_table(rows, out / "gamma_star")
    summary["gamma_star"] = rows

    rows = []
    for dims in cfg.get("counts", []):
        for cond in LMI_CONDITIONS:
            if cond.startswith("lti_") and dims["N"] != 1:
                continue
            rows.append({"condition": cond, "N": dims["N"], "n_x": dims["n_x"], "n_u": dims["n_u"],
                         "n_y": dims["n_y"],
                         "decision_vars": count_decision_vars(cond, dims["N"], dims["n_x"], dims["n_u"], dims["n_y"])})
    _write_table(rows, out / "decision_vars")
    summary["decision_vars"] = rows

    timing = cfg.get("timing")
    rows = []
    if timing:
        fam = family_from(need_system(timing["system"]))
        reps = max(5, int(timing.get("repetitions", 5)))
        med = {}
        for case in timing["cases"]:
            cond = need_condition(case["condition"])
            system = fam(case["gamma"])
            times, verdict = [], None
            for _ in range(reps):
                t0 = time.perf_counter()
                res = solve_feasibility(build(cond, system).compile(), solver=solver)
                times.append(time.perf_counter() - t0)
                verdict = res.status
            med[cond] = float(np.median(times))
            rows.append({"condition": cond, "gamma": case["gamma"], "verdict": verdict,
                         "decision_vars": build(cond, system).num_scalars,
                         "median_seconds": f"{med[cond]:.3f}", "repetitions": reps})
        summary["orderings"] = [{"faster": a, "slower": b, "holds": med[a] < med[b]}
                                for a, b in TIMING_ORDER if a in med and b in med]
    _write_table(rows, out / "timing")
    summary["timing"] = rows
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def compose_copies(system_dict: dict, copies: int) -> dict:
    return {"kind": "block_diag", "parts": [system_dict] * copies}


__all__ = ["BisectionResult", "BracketError", "NonMonotoneError", "bisect_gamma", "run_report",
           "family_from", "block_diag_compose", "TIMING_ORDER"]
