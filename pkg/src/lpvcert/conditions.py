"""LMI builders for the stability, detectability and stabilizability tests.

Every builder takes a :class:`~lpvcert.lpv.PolytopicSystem` and returns an
:class:`~lpvcert.lmi.LmiProblem` with one block constraint per vertex pair
``(i, j)`` (per vertex ``i`` for the LTI tests), plus explicit positivity
blocks where the test states ``P_i > 0`` / ``S_i > 0`` as a hypothesis.

Variable labels: ``P_i`` and ``S_i`` (symmetric), ``X_i`` / ``X_i_j`` slacks,
``Y_i`` / ``Y_i_j`` gain products, ``Z_i`` extra slacks; indices are 1-based.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lmi import AffineExpr, He, LmiProblem, block
from .lpv import PolytopicSystem, block_diag_compose, from_affine_scalar
from .matcore import inv_guarded, min_eigenvalue, svec_size, sym
from .sdpfeas import FeasibilityOutcome, SolveOptions, solve_feasibility

CONDITIONS = (
    "polyqs_l12", "polyqs_l13", "polyqs_l14",
    "det_thm1", "det_rem1",
    "stab_nec", "stab_thm3", "synth_t43", "synth_t44", "synth_daafouz",
    "lti_det", "lti_stab",
    "thm2_sampled",
)
LMI_CONDITIONS = CONDITIONS[:-1]
# which family a condition belongs to, used by reports and gain reconstruction
FAMILY = {
    "polyqs_l12": "stability", "polyqs_l13": "stability", "polyqs_l14": "stability",
    "det_thm1": "detectability", "det_rem1": "detectability", "lti_det": "detectability",
    "stab_nec": "stabilizability", "stab_thm3": "stabilizability", "synth_t43": "stabilizability",
    "synth_t44": "stabilizability", "synth_daafouz": "stabilizability", "lti_stab": "stabilizability",
    "thm2_sampled": "stabilizability",
}


def _lower(rows: Sequence[Sequence]) -> AffineExpr:
    """Symmetric block matrix from its lower triangle (upper entries ignored)."""
    n = len(rows)
    full = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            item = rows[i][j]
            full[i][j] = item
            if i != j:
                full[j][i] = None if item is None or (np.isscalar(item) and item == 0) \
                    else AffineExpr.of(item).T
    return block(full)


def _pairs(N: int):
    return [(i, j) for i in range(N) for j in range(N)]


def _polyqs_l12(sys_, prob, eps):
    n, N = sys_.n_x, sys_.N
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    X = [prob.rect_var(f"X_{i+1}", n, n) for i in range(N)]
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        prob.add_constraint(_lower([[He(X[i]) - S[i]], [A @ X[i], S[j]]]), eps, f"l12[{i+1},{j+1}]")


def _polyqs_l13(sys_, prob, eps):
    n, N = sys_.n_x, sys_.N
    P = [prob.sym_var(f"P_{i+1}", n) for i in range(N)]
    X = [prob.rect_var(f"X_{i+1}", n, n) for i in range(N)]
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        prob.add_constraint(_lower([[He(X[i]) - P[j]], [A.T @ X[i].T, P[i]]]), eps, f"l13[{i+1},{j+1}]")


def _polyqs_l14(sys_, prob, eps):
    n, N = sys_.n_x, sys_.N
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        prob.add_constraint(_lower([[S[i]], [A @ S[i], S[j]]]), eps, f"l14[{i+1},{j+1}]")


def _det_thm1(sys_, prob, eps):
    n, N = sys_.n_x, sys_.N
    P = [prob.sym_var(f"P_{i+1}", n) for i in range(N)]
    CtC = sys_.C.T @ sys_.C
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        prob.add_constraint(P[i] - A.T @ P[j] @ A + CtC, eps, f"thm1[{i+1},{j+1}]")
    for i in range(N):
        prob.add_constraint(P[i].expr(), eps, f"P_{i+1}>0")


def _det_rem1(sys_, prob, eps):
    n, N, ny = sys_.n_x, sys_.N, sys_.n_y
    P = [prob.sym_var(f"P_{i+1}", n) for i in range(N)]
    X = [prob.rect_var(f"X_{i+1}", n, n) for i in range(N)]
    Y = [prob.rect_var(f"Y_{i+1}", n, ny) for i in range(N)]
    C = sys_.C
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        low = A.T @ X[i].T + C.T @ Y[i].T
        prob.add_constraint(_lower([[He(X[i]) - P[j]], [low, P[i]]]), eps, f"rem1[{i+1},{j+1}]")


def _stab_nec(sys_, prob, eps):
    n, N = sys_.n_x, sys_.N
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    BBt = sys_.B @ sys_.B.T
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        prob.add_constraint(S[j] - A @ S[i] @ A.T + BBt, eps, f"nec[{i+1},{j+1}]")
    for i in range(N):
        prob.add_constraint(S[i].expr(), eps, f"S_{i+1}>0")


def _stab_thm3(sys_, prob, eps):
    n, N = sys_.n_x, sys_.N
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    X = [prob.rect_var(f"X_{i+1}", n, n) for i in range(N)]
    BBt = sys_.B @ sys_.B.T
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        top = He(X[i]) - A @ S[i] @ A.T + BBt
        prob.add_constraint(_lower([[top], [X[i], S[j]]]), eps, f"thm3[{i+1},{j+1}]")


def _synth_t43(sys_, prob, eps):
    n, N, nu = sys_.n_x, sys_.N, sys_.n_u
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    Y = [prob.rect_var(f"Y_{i+1}", nu, n) for i in range(N)]
    B = sys_.B
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        prob.add_constraint(_lower([[S[i]], [A @ S[i] + B @ Y[i], S[j]]]), eps, f"t43[{i+1},{j+1}]")


def _synth_t44(sys_, prob, eps):
    n, N, nu = sys_.n_x, sys_.N, sys_.n_u
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    X = [[prob.rect_var(f"X_{i+1}_{j+1}", n, n) for j in range(N)] for i in range(N)]
    Y = [[prob.rect_var(f"Y_{i+1}_{j+1}", nu, n) for j in range(N)] for i in range(N)]
    Z = [prob.rect_var(f"Z_{i+1}", n, n) for i in range(N)]
    B = sys_.B
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        rows = [[He(X[i][j]) - S[i]],
                [A @ X[i][j] + B @ Y[i][j], He(Z[i])],
                [None, Z[i], S[j]]]
        prob.add_constraint(_lower(rows), eps, f"t44[{i+1},{j+1}]")


def _synth_daafouz(sys_, prob, eps):
    n, N, nu = sys_.n_x, sys_.N, sys_.n_u
    S = [prob.sym_var(f"S_{i+1}", n) for i in range(N)]
    X = [prob.rect_var(f"X_{i+1}", n, n) for i in range(N)]
    Y = [prob.rect_var(f"Y_{i+1}", nu, n) for i in range(N)]
    B = sys_.B
    for i, j in _pairs(N):
        A = sys_.vertices[i]
        rows = [[He(X[i]) - S[i]], [A @ X[i] + B @ Y[i], S[j]]]
        prob.add_constraint(_lower(rows), eps, f"daafouz[{i+1},{j+1}]")


def _lti_det(sys_, prob, eps):
    A, C = sys_.vertices[0], sys_.C
    P = prob.sym_var("P_1", sys_.n_x)
    prob.add_constraint(P - A.T @ P @ A + C.T @ C, eps, "lti_det")
    prob.add_constraint(P.expr(), eps, "P_1>0")


def _lti_stab(sys_, prob, eps):
    A, B = sys_.vertices[0], sys_.B
    S = prob.sym_var("S_1", sys_.n_x)
    prob.add_constraint(S - A @ S @ A.T + B @ B.T, eps, "lti_stab")
    prob.add_constraint(S.expr(), eps, "S_1>0")


_BUILDERS: dict[str, Callable] = {
    "polyqs_l12": _polyqs_l12, "polyqs_l13": _polyqs_l13, "polyqs_l14": _polyqs_l14,
    "det_thm1": _det_thm1, "det_rem1": _det_rem1,
    "stab_nec": _stab_nec, "stab_thm3": _stab_thm3,
    "synth_t43": _synth_t43, "synth_t44": _synth_t44, "synth_daafouz": _synth_daafouz,
    "lti_det": _lti_det, "lti_stab": _lti_stab,
}


def build(condition: str, system: PolytopicSystem, eps: float | None = None) -> LmiProblem:
    """LMI problem for ``condition``; ``eps=None`` uses the problem's scale-based default."""
    if condition == "thm2_sampled":
        raise ValueError("thm2_sampled is not an LMI; use check_thm2_sampled")
    if condition not in _BUILDERS:
        raise ValueError(f"unknown condition {condition!r}; expected one of {', '.join(CONDITIONS)}")
    if eps is not None and not eps > 0:
        raise ValueError("eps must be positive")
    if condition.startswith("lti_") and system.N != 1:
        raise ValueError(f"{condition} needs a single-vertex (LTI) system, got N = {system.N}")
    prob = LmiProblem(condition)
    _BUILDERS[condition](system, prob, eps)
    return prob


def count_decision_vars(condition: str, N: int, n_x: int, n_u: int = 1, n_y: int = 1) -> int:
    """Closed-form number of scalar decision variables."""
    if min(N, n_x, n_u, n_y) < 1:
        raise ValueError("dimensions must be positive")
    n, s = n_x, svec_size(n_x)
    table = {
        "polyqs_l12": N * (n * n + s),
        "polyqs_l13": N * (n * n + s),
        "polyqs_l14": N * s,
        "det_thm1": N * s,
        "det_rem1": N * (n * n + s + n * n_y),
        "stab_nec": N * s,
        "stab_thm3": N * (n * n + s),
        "synth_t43": N * (s + n * n_u),
        "synth_t44": N * (N * (n * n + n * n_u) + n * n + s),
        "synth_daafouz": N * (n * n + s + n * n_u),
        "lti_det": s,
        "lti_stab": s,
    }
    if condition not in table:
        raise ValueError(f"unknown condition {condition!r}")
    return table[condition]


# ---------------------------------------------------------------- certificates

# conditions whose Lyapunov matrices are solved for directly (P_i) rather
# than through their inverses (S_i)
_P_BASED = {"polyqs_l13", "det_thm1", "det_rem1", "lti_det"}


@dataclass(frozen=True)
class Certificate:
    """Solved variable values of a feasible condition.

    ``lyapunov()`` returns the vertex matrices ``P_i`` of the poly-quadratic
    function ``V(p, x) = x' (sum_i xi_i(p) P_i) x``; for S-based conditions
    these are ``S_i^{-1}``.
    """

    condition: str
    values: dict
    margin: float = float("nan")
    gamma: float | None = None

    @property
    def N(self) -> int:
        key = "P" if self.condition in _P_BASED else "S"
        return sum(1 for k in self.values if re.fullmatch(rf"{key}_\d+", k))

    def family(self, name: str) -> list[np.ndarray]:
        """``[name_1, ..., name_N]``."""
        return [np.asarray(self.values[f"{name}_{i+1}"], dtype=float) for i in range(self.N)]

    def pair_family(self, name: str) -> list[list[np.ndarray]]:
        N = self.N
        return [[np.asarray(self.values[f"{name}_{i+1}_{j+1}"], dtype=float) for j in range(N)]
                for i in range(N)]

    def lyapunov(self) -> list[np.ndarray]:
        if self.condition in _P_BASED:
            return [sym(P) for P in self.family("P")]
        return [sym(inv_guarded(S, what=f"S_{i+1}")) for i, S in enumerate(self.family("S"))]

    def to_dict(self) -> dict:
        return {"schema_version": 1, "condition": self.condition, "gamma": self.gamma,
                "margin": self.margin,
                "values": {k: np.asarray(v).tolist() for k, v in self.values.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        if d.get("schema_version") != 1:
            raise ValueError(f"unsupported certificate schema {d.get('schema_version')!r}")
        values = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in d["values"].items()}
        return cls(d["condition"], values, float(d.get("margin", float("nan"))), d.get("gamma"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Certificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def solve_condition(condition: str, system: PolytopicSystem, eps: float | None = None,
                    opts: SolveOptions | None = None, solver=None,
                    gamma: float | None = None) -> tuple[FeasibilityOutcome, Certificate | None]:
    """Build, compile and solve ``condition``; the certificate is ``None`` unless feasible."""
    prob = build(condition, system, eps)
    out = solve_feasibility(prob.compile(), opts, solver)
    if not out.feasible:
        return out, None
    return out, Certificate(condition, prob.unpack(out.assignment), out.margin, gamma)


# ---------------------------------------------------------------- parameter-dependent check

def P_of(system: PolytopicSystem, Pbars: Sequence[np.ndarray], pi) -> np.ndarray:
    w = system.xi(pi)
    return sym(np.tensordot(w, np.asarray(Pbars, dtype=float), axes=(0, 0)))


def check_thm2_sampled(system: PolytopicSystem, Pbars: Sequence[np.ndarray], grid) -> np.ndarray:
    """Smallest eigenvalue of ``S(p+) - A(p) S(p) A(p)^T + B B^T`` at each ``(p, p+)`` pair.

    ``S(p) = P(p)^{-1}`` with ``P(p) = sum_i xi_i(p) P_i``. Negative entries refute
    the candidate on the grid; positive entries are evidence only.
    """
    Pbars = [sym(P) for P in Pbars]
    if len(Pbars) != system.N:
        raise ValueError(f"need {system.N} matrices, got {len(Pbars)}")
    for k, P in enumerate(Pbars):
        if min_eigenvalue(P) <= 0:
            raise ValueError(f"P_{k+1} is not positive definite")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    BBt = system.B @ system.B.T
    out = np.empty(len(grid))
    for k, (pi, pn) in enumerate(grid):
        S = inv_guarded(P_of(system, Pbars, pi), what="P(pi)")
        Sn = inv_guarded(P_of(system, Pbars, pn), what="P(pi+)")
        A = system.evaluate_A(pi)
        out[k] = min_eigenvalue(Sn - A @ S @ A.T + BBt)
    return out


def pair_grid(system: PolytopicSystem, m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """All ``(p, p+)`` pairs from an ``m``-point-per-axis grid of the parameter set."""
    pts = system.params.grid(m)
    return [(a, b) for a in pts for b in pts]


# ---------------------------------------------------------------- case study

CASE_A0 = np.array([[4 / 5, -1 / 4, 0, 1],
                    [1, 0, 0, 0],
                    [0, 0, 1 / 5, 3 / 100],
                    [0, 0, 1, 0]])
CASE_AP = np.outer([0, 0, 1, 0], [4 / 5, -1 / 4, -1 / 5, -3 / 100])
CASE_B = np.array([[1.0], [0.0], [1.0], [0.0]])
CASE_C = np.array([[1.0, 0.0, 0.0, 0.0]])


def case_study(gamma: float, copies: int = 1) -> PolytopicSystem:
    """The 4-state benchmark with ``|p| <= gamma``; ``copies > 1`` stacks decoupled copies."""
    base = from_affine_scalar(CASE_A0, CASE_AP, gamma, CASE_B, CASE_C)
    return base if copies == 1 else block_diag_compose([base] * copies)
