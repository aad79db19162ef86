"""Observer and controller gains reconstructed from solved certificates.

One-parameter gains (``thm1``, ``rem1``, ``t43``, ``daafouz``, ``lti``) are
convex combinations of vertex gains and only need the current parameter.
``thm3`` and ``t44`` need the next parameter as well (``needs_next``); the
caller has to know ``p_{k+1}`` one step ahead, which is how simulation and
the Monte-Carlo check feed them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditions import Certificate
from .lpv import PolytopicSystem
from .matcore import as_matrix, inv_guarded, solve_guarded, sym

MAX_COND = 1e12
RECIPES = ("thm1", "rem1", "thm3", "t43", "t44", "daafouz", "lti")
# condition id -> (kind, recipe)
RECIPE_OF = {
    "det_thm1": ("observer", "thm1"), "det_rem1": ("observer", "rem1"), "lti_det": ("observer", "lti"),
    "stab_thm3": ("controller", "thm3"), "synth_t43": ("controller", "t43"),
    "synth_t44": ("controller", "t44"), "synth_daafouz": ("controller", "daafouz"),
    "lti_stab": ("controller", "lti"),
}


def _rel_close(a: np.ndarray, b: np.ndarray, rtol: float) -> bool:
    return np.linalg.norm(a - b) <= rtol * max(np.linalg.norm(a), np.linalg.norm(b))


def _batch_cond_guard(M: np.ndarray, what: str) -> None:
    cond = np.linalg.cond(M)
    bad = ~np.isfinite(cond) | (cond > MAX_COND)
    if np.any(bad):
        raise np.linalg.LinAlgError(f"{what} is numerically singular (cond={np.max(cond):.3e})")


# ---------------------------------------------------------------- closed forms

def lti_observer_gain(A, C, Pbar, return_both: bool = False):
    """``L = -A (P + C'C)^{-1} C'``, checked against ``-A S C' (I + C S C')^{-1}``."""
    A, C, P = as_matrix(A, "A"), as_matrix(C, "C"), sym(as_matrix(Pbar, "Pbar"))
    L1 = -A @ solve_guarded(P + C.T @ C, C.T, MAX_COND, "P + C'C")
    S = inv_guarded(P, MAX_COND, "P")
    L2 = -A @ S @ C.T @ inv_guarded(np.eye(C.shape[0]) + C @ S @ C.T, MAX_COND, "I + C S C'")
    if not _rel_close(L1, L2, 1e-8):
        raise ArithmeticError("observer gain forms disagree beyond 1e-8")
    return (L1, L2) if return_both else L1


def lti_controller_gain(A, B, Sbar, return_both: bool = False):
    """``K = -B' (S + BB')^{-1} A``, checked against ``-(I + B'PB)^{-1} B'P A``."""
    A, B, S = as_matrix(A, "A"), as_matrix(B, "B"), sym(as_matrix(Sbar, "Sbar"))
    K1 = -B.T @ solve_guarded(S + B @ B.T, A, MAX_COND, "S + BB'")
    P = inv_guarded(S, MAX_COND, "S")
    K2 = -solve_guarded(np.eye(B.shape[1]) + B.T @ P @ B, B.T @ P @ A, MAX_COND, "I + B'PB")
    if not _rel_close(K1, K2, 1e-8):
        raise ArithmeticError("controller gain forms disagree beyond 1e-8")
    return (K1, K2) if return_both else K1


def thm1_vertex_gains(system: PolytopicSystem, Pbars) -> np.ndarray:
    C = system.C
    return np.array([-A @ solve_guarded(sym(P) + C.T @ C, C.T, MAX_COND, f"P_{i+1} + C'C")
                     for i, (A, P) in enumerate(zip(system.vertices, Pbars))])


def rem1_vertex_gains(Xs, Ys) -> np.ndarray:
    return np.array([solve_guarded(X, Y, MAX_COND, f"X_{i+1}") for i, (X, Y) in enumerate(zip(Xs, Ys))])


def t43_vertex_gains(Ys, Sbars) -> np.ndarray:
    # K_i = Y_i S_i^{-1}, solved from S_i K_i' = Y_i'
    return np.array([solve_guarded(sym(S), np.asarray(Y).T, MAX_COND, f"S_{i+1}").T
                     for i, (Y, S) in enumerate(zip(Ys, Sbars))])


def daafouz_vertex_gains(Ys, Xs) -> np.ndarray:
    return np.array([solve_guarded(np.asarray(X).T, np.asarray(Y).T, MAX_COND, f"X_{i+1}").T
                     for i, (Y, X) in enumerate(zip(Ys, Xs))])


def observer_gain_thm1(system: PolytopicSystem, Pbars, pi) -> np.ndarray:
    return np.tensordot(system.xi(pi), thm1_vertex_gains(system, Pbars), axes=(0, 0))


def observer_gain_rem1(system: PolytopicSystem, Xs, Ys, pi) -> np.ndarray:
    return np.tensordot(system.xi(pi), rem1_vertex_gains(Xs, Ys), axes=(0, 0))


def controller_gain_t43(system: PolytopicSystem, Ys, Sbars, pi) -> np.ndarray:
    return np.tensordot(system.xi(pi), t43_vertex_gains(Ys, Sbars), axes=(0, 0))


def controller_gain_thm3(system: PolytopicSystem, Sbars, pi_now, pi_next) -> np.ndarray:
    Pbars = np.array([inv_guarded(S, MAX_COND, f"S_{i+1}") for i, S in enumerate(Sbars)])
    return _thm3_batch(system, Pbars, np.atleast_2d(pi_now), np.atleast_2d(pi_next))[0]


def controller_gain_t44(system: PolytopicSystem, Xijs, Yijs, pi_now, pi_next) -> np.ndarray:
    return _t44_batch(system, np.asarray(Xijs, float), np.asarray(Yijs, float),
                      np.atleast_2d(pi_now), np.atleast_2d(pi_next))[0]


def _thm3_batch(system: PolytopicSystem, Pbars: np.ndarray, P: np.ndarray, Pn: np.ndarray) -> np.ndarray:
    # S(p) is the inverse of the xi-combination of the P_i, not the combination of the S_i
    Pnext = np.einsum("kn,nab->kab", system.xi(Pn).reshape(-1, system.N), Pbars)
    _batch_cond_guard(Pnext, "P(p+)")
    Snext = np.linalg.inv(Pnext)
    B = system.B
    M = Snext + B @ B.T
    _batch_cond_guard(M, "S(p+) + BB'")
    A = np.einsum("kn,nab->kab", system.xi(P).reshape(-1, system.N), system.vertices)
    return -np.einsum("ba,kbc->kac", B, np.linalg.solve(M, A))


def _t44_batch(system: PolytopicSystem, Xij: np.ndarray, Yij: np.ndarray,
               P: np.ndarray, Pn: np.ndarray) -> np.ndarray:
    w = system.xi(P).reshape(-1, system.N)
    wn = system.xi(Pn).reshape(-1, system.N)
    Xi = np.einsum("kj,ijab->kiab", wn, Xij)          # X_i(p+)
    Yi = np.einsum("kj,ijab->kiab", wn, Yij)          # Y_i(p+)
    _batch_cond_guard(Xi.reshape(-1, *Xi.shape[2:]), "X_i(p+)")
    # Y_i X_i^{-1} = (X_i^{-T} Y_i^T)^T
    Ki = np.swapaxes(np.linalg.solve(np.swapaxes(Xi, -1, -2), np.swapaxes(Yi, -1, -2)), -1, -2)
    return np.einsum("ki,kiab->kab", w, Ki)


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class GainSchedule:
    """A reconstructed gain ``L(p)`` / ``K(p)`` or ``K(p, p+)``.

    ``matrices`` keeps the certificate data the recipe needs; ``vertex_gains``
    is set for the polytopic recipes.
    """

    kind: str
    recipe: str
    system: PolytopicSystem = field(repr=False)
    matrices: dict = field(repr=False)
    vertex_gains: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("observer", "controller"):
            raise ValueError(f"unknown gain kind {self.kind!r}")
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}")

    @property
    def needs_next(self) -> bool:
        return self.recipe in ("thm3", "t44")

    @property
    def shape(self) -> tuple[int, int]:
        s = self.system
        return (s.n_x, s.n_y) if self.kind == "observer" else (s.n_u, s.n_x)

    def evaluate_batch(self, P, Pn=None) -> np.ndarray:
        """Gains at parameter rows ``P`` (and ``Pn`` for preview recipes), shape ``(k, r, c)``."""
        P = self.system._points(P)
        if self.needs_next:
            if Pn is None:
                raise ValueError(f"recipe {self.recipe} needs the next parameter")
            Pn = self.system._points(Pn)
            if Pn.shape != P.shape:
                raise ValueError("current and next parameters differ in shape")
            if self.recipe == "thm3":
                return _thm3_batch(self.system, self.matrices["P"], P, Pn)
            return _t44_batch(self.system, self.matrices["X"], self.matrices["Y"], P, Pn)
        w = self.system.xi(P).reshape(-1, self.system.N)
        return np.einsum("kn,nab->kab", w, self.vertex_gains)

    def evaluate(self, pi, pi_next=None) -> np.ndarray:
        if self.needs_next and pi_next is None:
            raise ValueError(f"recipe {self.recipe} needs the next parameter")
        return self.evaluate_batch(np.atleast_2d(np.asarray(pi, float).ravel()),
                                   None if pi_next is None else np.atleast_2d(np.asarray(pi_next, float).ravel()))[0]

    def to_dict(self, grid_points: int = 5) -> dict:
        """JSON-ready export with gains sampled on a parameter grid (for documentation)."""
        pts = self.system.params.grid(grid_points)
        if self.needs_next:
            pairs = [(a, b) for a in pts for b in pts]
            vals = self.evaluate_batch(np.array([a for a, _ in pairs]), np.array([b for _, b in pairs]))
            samples = [{"p": a.tolist(), "p_next": b.tolist(), "gain": v.tolist()}
                       for (a, b), v in zip(pairs, vals)]
        else:
            vals = self.evaluate_batch(pts)
            samples = [{"p": a.tolist(), "gain": v.tolist()} for a, v in zip(pts, vals)]
        return {
            "schema_version": 1, "kind": self.kind, "recipe": self.recipe,
            "matrices": {k: np.asarray(v).tolist() for k, v in self.matrices.items()},
            "vertex_gains": None if self.vertex_gains is None else self.vertex_gains.tolist(),
            "samples": samples,
        }

    def save(self, path, grid_points: int = 5) -> None:
        Path(path).write_text(json.dumps(self.to_dict(grid_points), indent=1))

    @classmethod
    def from_dict(cls, d: dict, system: PolytopicSystem) -> "GainSchedule":
        if d.get("schema_version") != 1:
            raise ValueError(f"unsupported gain schema {d.get('schema_version')!r}")
        mats = {k: np.asarray(v, dtype=float) for k, v in d["matrices"].items()}
        vg = None if d.get("vertex_gains") is None else np.asarray(d["vertex_gains"], dtype=float)
        return cls(d["kind"], d["recipe"], system, mats, vg)

    @classmethod
    def load(cls, path, system: PolytopicSystem) -> "GainSchedule":
        return cls.from_dict(json.loads(Path(path).read_text()), system)


def gain_from_certificate(system: PolytopicSystem, cert: Certificate) -> GainSchedule:
    """Reconstruct the gain belonging to ``cert.condition``."""
    if cert.condition not in RECIPE_OF:
        raise ValueError(f"condition {cert.condition!r} has no gain recipe")
    kind, recipe = RECIPE_OF[cert.condition]
    if cert.N != system.N:
        raise ValueError(f"certificate has {cert.N} vertices, system has {system.N}")
    if recipe == "thm1":
        P = cert.family("P")
        return GainSchedule(kind, recipe, system, {"P": np.array(P)}, thm1_vertex_gains(system, P))
    if recipe == "rem1":
        X, Y = cert.family("X"), cert.family("Y")
        return GainSchedule(kind, recipe, system, {"X": np.array(X), "Y": np.array(Y)},
                            rem1_vertex_gains(X, Y))
    if recipe == "lti":
        A = system.vertices[0]
        if kind == "observer":
            P = cert.family("P")[0]
            return GainSchedule(kind, recipe, system, {"P": P[None]},
                                lti_observer_gain(A, system.C, P)[None])
        S = cert.family("S")[0]
        return GainSchedule(kind, recipe, system, {"S": S[None]}, lti_controller_gain(A, system.B, S)[None])
    if recipe == "t43":
        Y, S = cert.family("Y"), cert.family("S")
        return GainSchedule(kind, recipe, system, {"Y": np.array(Y), "S": np.array(S)},
                            t43_vertex_gains(Y, S))
    if recipe == "daafouz":
        Y, X = cert.family("Y"), cert.family("X")
        return GainSchedule(kind, recipe, system, {"Y": np.array(Y), "X": np.array(X)},
                            daafouz_vertex_gains(Y, X))
    if recipe == "thm3":
        return GainSchedule(kind, recipe, system, {"P": np.array(cert.lyapunov())})
    X, Y = cert.pair_family("X"), cert.pair_family("Y")
    return GainSchedule(kind, recipe, system, {"X": np.array(X), "Y": np.array(Y)})
