"""Polytopic LPV systems ``x+ = A(p) x + B u, y = C x`` with ``A(p) = sum_i xi_i(p) A_i``.

A parameter point is always a 1-D float array of length ``param_dim``; scalar
families accept plain floats as well. The simplex map ``xi`` is a black box
(vectorised: ``(k, d) -> (k, N)``), accompanied by one witness parameter per
vertex when the system is strictly polytopic.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .matcore import as_matrix

SCHEMA_VERSION = 1


# ---------------------------------------------------------------- parameter sets

class ParameterSet:
    dim: int

    def contains(self, P: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        raise NotImplementedError

    def grid(self, m: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(ParameterSet):
    lo: np.ndarray
    hi: np.ndarray

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, P, tol=1e-12):
        P = np.atleast_2d(P)
        return np.all((P >= self.lo - tol) & (P <= self.hi + tol), axis=1)

    def sample(self, rng, k):
        return rng.uniform(self.lo, self.hi, size=(k, self.dim))

    def grid(self, m):
        axes = [np.linspace(a, b, m) for a, b in zip(self.lo, self.hi)]
        return np.array(list(itertools.product(*axes)))


@dataclass(frozen=True)
class Simplex(ParameterSet):
    """The unit simplex in R^N, used when the parameter *is* the coordinate vector."""
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def contains(self, P, tol=1e-12):
        P = np.atleast_2d(P)
        return np.all(P >= -tol, axis=1) & (np.abs(P.sum(axis=1) - 1) <= tol * self.n + 1e-12)

    def sample(self, rng, k):
        return rng.dirichlet(np.ones(self.n), size=k)

    def grid(self, m):
        pts = [np.array(c) / (m - 1) for c in itertools.product(range(m), repeat=self.n)
               if sum(c) == m - 1] if m > 1 else [np.full(self.n, 1.0 / self.n)]
        return np.array(pts)


@dataclass(frozen=True)
class Product(ParameterSet):
    parts: tuple[ParameterSet, ...]

    @property
    def dim(self) -> int:
        return sum(p.dim for p in self.parts)

    def split(self, P: np.ndarray) -> list[np.ndarray]:
        cuts = np.cumsum([p.dim for p in self.parts])[:-1]
        return np.split(np.atleast_2d(P), cuts, axis=1)

    def contains(self, P, tol=1e-12):
        ok = [s.contains(q, tol) for s, q in zip(self.parts, self.split(P))]
        return np.logical_and.reduce(ok)

    def sample(self, rng, k):
        return np.hstack([s.sample(rng, k) for s in self.parts])

    def grid(self, m):
        grids = [s.grid(m) for s in self.parts]
        return np.array([np.concatenate(c) for c in itertools.product(*grids)])


# ---------------------------------------------------------------- systems

@dataclass(frozen=True)
class PolytopicSystem:
    vertices: np.ndarray                     # (N, n_x, n_x)
    B: np.ndarray
    C: np.ndarray
    xi_fn: Callable[[np.ndarray], np.ndarray]
    params: ParameterSet
    witnesses: np.ndarray | None = None      # (N, param_dim); row i maps to e_i
    source: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim != 3 or V.shape[1] != V.shape[2] or V.shape[0] < 1:
            raise ValueError(f"vertices must have shape (N, n, n), got {V.shape}")
        B, C = as_matrix(self.B, "B"), as_matrix(self.C, "C")
        if B.shape[0] != V.shape[1] or C.shape[1] != V.shape[1]:
            raise ValueError(f"B {B.shape} / C {C.shape} do not match n_x = {V.shape[1]}")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def N(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_x(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def strictly_polytopic(self) -> bool:
        if self.witnesses is None:
            return False
        return bool(np.allclose(self.xi(self.witnesses), np.eye(self.N), atol=1e-12))

    def _points(self, pi) -> np.ndarray:
        P = np.asarray(pi, dtype=float)
        if P.ndim == 0:
            P = P.reshape(1, 1)
        elif P.ndim == 1:
            P = P.reshape(-1, self.params.dim) if self.params.dim > 1 else P.reshape(-1, 1)
        if P.shape[1] != self.params.dim:
            raise ValueError(f"parameter points need {self.params.dim} coordinates, got {P.shape[1]}")
        bad = ~self.params.contains(P)
        if np.any(bad):
            raise ValueError(f"parameter {P[np.argmax(bad)]} outside the parameter set")
        return P

    def _is_single(self, pi) -> bool:
        nd = np.ndim(pi)
        return nd == 0 or (nd == 1 and (self.params.dim > 1 or np.size(pi) == 1))

    def xi(self, pi) -> np.ndarray:
        """Simplex coordinates. One point gives shape ``(N,)``; a batch ``(k, N)``."""
        P = self._points(pi)
        X = np.asarray(self.xi_fn(P), dtype=float).reshape(P.shape[0], self.N)
        return X[0] if self._is_single(pi) else X

    def evaluate_A(self, pi) -> np.ndarray:
        w = self.xi(pi)
        return np.tensordot(w, self.vertices, axes=(-1, 0))

    def with_vertices(self, vertices) -> "PolytopicSystem":
        """Same parametrisation, different vertex matrices (e.g. a closed loop)."""
        return PolytopicSystem(np.asarray(vertices, dtype=float), self.B, self.C, self.xi_fn,
                               self.params, self.witnesses, None)


def _affine_xi(gamma: float):
    def xi(P):
        p = P[:, 0]
        return np.column_stack(((gamma - p) / (2 * gamma), (gamma + p) / (2 * gamma)))
    return xi


def from_affine_scalar(A0, Ap, gamma: float, B, C) -> PolytopicSystem:
    """Two-vertex embedding of ``A0 + p Ap`` for ``|p| <= gamma``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    A0, Ap = as_matrix(A0, "A0"), as_matrix(Ap, "Ap")
    if A0.shape != Ap.shape:
        raise ValueError(f"A0 {A0.shape} and Ap {Ap.shape} differ")
    verts = np.stack([A0 - gamma * Ap, A0 + gamma * Ap])
    src = {"kind": "affine_scalar", "A0": A0.tolist(), "Ap": Ap.tolist(), "gamma": float(gamma),
           "B": as_matrix(B).tolist(), "C": as_matrix(C).tolist()}
    return PolytopicSystem(verts, B, C, _affine_xi(float(gamma)),
                           Box(np.array([-gamma]), np.array([gamma])),
                           np.array([[-gamma], [gamma]]), src)


def from_vertices(vertices: Sequence, B, C) -> PolytopicSystem:
    """System whose parameter is the simplex coordinate vector itself."""
    V = np.asarray(vertices, dtype=float)
    N = V.shape[0]
    src = {"kind": "vertices", "A": V.tolist(), "B": as_matrix(B).tolist(), "C": as_matrix(C).tolist()}
    return PolytopicSystem(V, B, C, lambda P: P, Simplex(N), np.eye(N), src)


def _row_kron(mats: list[np.ndarray]) -> np.ndarray:
    out = mats[0]
    for M in mats[1:]:
        out = (out[:, :, None] * M[:, None, :]).reshape(out.shape[0], -1)
    return out


def block_diag_compose(systems: Sequence[PolytopicSystem]) -> PolytopicSystem:
    """Decoupled composition; vertices are the Cartesian product (last factor fastest)."""
    systems = list(systems)
    if not systems:
        raise ValueError("need at least one system")
    if len(systems) == 1:
        return systems[0]
    verts = np.stack([sla.block_diag(*combo) for combo in
                      itertools.product(*[list(s.vertices) for s in systems])])
    B = sla.block_diag(*[s.B for s in systems])
    C = sla.block_diag(*[s.C for s in systems])
    pset = Product(tuple(s.params for s in systems))

    def xi(P):
        return _row_kron([np.asarray(s.xi_fn(q), dtype=float).reshape(q.shape[0], s.N)
                          for s, q in zip(systems, pset.split(P))])

    witnesses = None
    if all(s.witnesses is not None for s in systems):
        witnesses = np.array([np.concatenate(c) for c in
                              itertools.product(*[list(s.witnesses) for s in systems])])
    src = None
    if all(s.source is not None for s in systems):
        src = {"kind": "block_diag", "parts": [s.source for s in systems]}
    return PolytopicSystem(verts, B, C, xi, pset, witnesses, src)


# ---------------------------------------------------------------- simulation

@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray        # (K+1, n_x)
    inputs: np.ndarray        # (K, n_u)
    params: np.ndarray        # (K or K+1, param_dim)


def simulate(system: PolytopicSystem, x0, params, inputs=None, gain=None,
             mode: str = "open") -> Trajectory:
    """Run the open loop, the state-feedback closed loop or the observer error system.

    With a preview gain (``gain.needs_next``) step k uses ``params[k+1]``, so
    ``len(params) - 1`` steps are taken; otherwise ``len(params)`` steps.
    In closed-loop mode ``inputs`` act as an exogenous signal added to ``K x``;
    in error-system mode they are ignored.
    """
    if mode not in ("open", "closed_loop", "error_system"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "open" and gain is None:
        raise ValueError(f"mode {mode!r} requires a gain")
    P = system._points(params)
    preview = gain is not None and mode != "open" and getattr(gain, "needs_next", False)
    K = P.shape[0] - 1 if preview else P.shape[0]
    if K < 0:
        raise ValueError("need at least one parameter point for a preview gain")
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != system.n_x:
        raise ValueError(f"x0 has {x.size} entries, expected {system.n_x}")
    if inputs is None or mode == "error_system":
        U = np.zeros((K, system.n_u))
    else:
        U = np.asarray(inputs, dtype=float).reshape(-1, system.n_u)
        if U.shape[0] != K:
            raise ValueError(f"{U.shape[0]} inputs for {K} steps")
    A = np.tensordot(np.asarray(system.xi_fn(P), float).reshape(P.shape[0], system.N),
                     system.vertices, axes=(1, 0))
    X = np.empty((K + 1, system.n_x))
    X[0] = x
    used = np.array(U)
    for k in range(K):
        Ak = A[k]
        if mode == "open":
            X[k + 1] = Ak @ X[k] + system.B @ U[k]
            continue
        G = gain.evaluate(P[k], P[k + 1]) if preview else gain.evaluate(P[k])
        if mode == "closed_loop":
            used[k] = G @ X[k] + U[k]
            X[k + 1] = Ak @ X[k] + system.B @ used[k]
        else:
            X[k + 1] = (Ak + G @ system.C) @ X[k]
    return Trajectory(X, used, P)


# ---------------------------------------------------------------- oracle

class OracleBudgetError(RuntimeError):
    def __init__(self, msg: str, partial_bound: float):
        super().__init__(f"{msg} (partial bound {partial_bound:.6g})")
        self.partial_bound = partial_bound


def product_radius_oracle(system: PolytopicSystem, max_len: int, budget: int = 200_000) -> float:
    """Lower bound on the joint spectral radius from vertex products.

    Returns ``max_w rho(A_w)^(1/|w|)`` over words of length ``<= max_len``.
    Branches are pruned when ``||A_prefix|| * max_i ||A_i||^r`` cannot beat the
    current best for any remaining length. Exceeding ``budget`` products raises
    ``OracleBudgetError`` carrying the bound found so far.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    V = system.vertices
    N = V.shape[0]
    norms = np.array([np.linalg.norm(M, 2) for M in V])
    nmax = float(norms.max())
    best = max(float(np.max(np.abs(np.linalg.eigvals(M)))) for M in V)
    count = N
    # depth-first over words starting with vertex 0..N-1; cyclic shifts share a
    # spectrum, so words are only extended with indices >= their first letter
    stack = [(i, (i,), V[i]) for i in range(N)][::-1]
    while stack:
        first, word, M = stack.pop()
        l = len(word)
        if l >= max_len:
            continue
        nM = np.linalg.norm(M, 2)
        for j in range(N - 1, first - 1, -1):
            M2 = V[j] @ M
            L = l + 1
            count += 1
            if count > budget:
                raise OracleBudgetError(f"more than {budget} products needed", best)
            r = float(np.max(np.abs(np.linalg.eigvals(M2)))) ** (1.0 / L)
            best = max(best, r)
            nM2 = nM * norms[j]
            ub = max((nM2 * nmax ** (Lp - L)) ** (1.0 / Lp) for Lp in range(L, max_len + 1))
            if L < max_len and ub > best:
                stack.append((first, word + (j,), M2))
    return best


# ---------------------------------------------------------------- file format

def system_from_dict(d: dict, gamma: float | None = None) -> PolytopicSystem:
    """Build a system from its JSON description; ``gamma`` overrides affine radii."""
    kind = d.get("kind")
    if kind == "affine_scalar":
        g = float(d["gamma"]) if gamma is None else float(gamma)
        return from_affine_scalar(d["A0"], d["Ap"], g, d["B"], d["C"])
    if kind == "vertices":
        sys_ = from_vertices(d["A"], d["B"], d["C"])
        return sys_
    if kind == "block_diag":
        return block_diag_compose([system_from_dict(p, gamma) for p in d["parts"]])
    raise ValueError(f"unknown system kind {kind!r}")


def load_system(path, gamma: float | None = None) -> PolytopicSystem:
    d = json.loads(Path(path).read_text())
    ver = d.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ValueError(f"unsupported system schema version {ver}")
    return system_from_dict(d, gamma)


def save_system(system: PolytopicSystem, path) -> None:
    if system.source is None:
        raise ValueError("system has no serialisable description")
    Path(path).write_text(json.dumps({"schema_version": SCHEMA_VERSION, **system.source}, indent=2))


def is_affine_family(d: dict) -> bool:
    kind = d.get("kind")
    if kind == "affine_scalar":
        return True
    if kind == "block_diag":
        return all(is_affine_family(p) for p in d["parts"])
    return False
