"""Independent certificate checks that never look at solver output.

Two checks are provided. ``check_vertex_certificate`` evaluates the blocks
``[[S_i, *], [M_i S_i, S_j]]`` with ``S_i = P_i^{-1}`` and ``M_i`` the vertex
dynamics of the open loop, closed loop or observer error system. Preview
gains are not polytopic, so for them the block is evaluated with ``S(p)``,
``M(p, p+)`` and ``S(p+)`` on a grid of parameter pairs. ``monte_carlo_descent``
simulates random parameter sequences and records the worst one-step change of
``V(p, x) = x' P(p) x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditions import Certificate
from .lpv import PolytopicSystem
from .matcore import inv_guarded, min_eigenvalue, min_eigenvalues, sym

MODES = ("open", "closed_loop", "error_system")


@dataclass
class VerificationReport:
    """Vertex (or grid) margins plus the Monte-Carlo descent statistic.

    ``vertex_margins`` maps ``(i, j, label)`` to a smallest eigenvalue; the
    label is ``"vertex"`` for vertex pairs and ``"grid"`` for parameter-grid
    pairs, in which case ``i`` and ``j`` index the grid points.
    """

    mode: str
    vertex_margins: dict = field(default_factory=dict)
    mc_worst_ratio: float | None = None
    a3_used: float | None = None
    sequences_run: int = 0
    horizon: int = 0
    seed: int | None = None

    @property
    def min_margin(self) -> float:
        return min(self.vertex_margins.values(), default=np.inf)

    @property
    def passed(self) -> bool:
        ok = bool(self.vertex_margins) and self.min_margin > 0
        return ok and (self.mc_worst_ratio is None or self.mc_worst_ratio <= 0)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1, "mode": self.mode, "passed": self.passed,
            "vertex_margins": [{"i": int(i), "j": int(j), "label": lab, "margin": float(m)}
                               for (i, j, lab), m in self.vertex_margins.items()],
            "min_margin": float(self.min_margin) if self.vertex_margins else None,
            "mc_worst_ratio": self.mc_worst_ratio, "a3_used": self.a3_used,
            "sequences_run": self.sequences_run, "horizon": self.horizon, "seed": self.seed,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _lyapunov(cert) -> list[np.ndarray]:
    if isinstance(cert, Certificate):
        return cert.lyapunov()
    return [sym(P) for P in cert]


def _mode_for(gain, mode: str | None) -> str:
    if mode is None:
        mode = "open" if gain is None else ("error_system" if gain.kind == "observer" else "closed_loop")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "open" and gain is None:
        raise ValueError(f"mode {mode!r} needs a gain")
    if mode == "closed_loop" and gain.kind != "controller":
        raise ValueError("closed_loop mode needs a controller gain")
    if mode == "error_system" and gain.kind != "observer":
        raise ValueError("error_system mode needs an observer gain")
    return mode


def _closed(system: PolytopicSystem, A: np.ndarray, G: np.ndarray | None, mode: str) -> np.ndarray:
    """Effective dynamics for stacks ``A`` (k, n, n) and gains ``G`` (k, r, c)."""
    if mode == "open":
        return A
    if mode == "closed_loop":
        return A + np.einsum("ab,kbc->kac", system.B, G)
    return A + np.einsum("kab,bc->kac", G, system.C)


def default_grid_points(system: PolytopicSystem, max_pairs: int = 20000) -> int:
    """Points per parameter axis so that the pair grid stays below ``max_pairs``."""
    d = system.params.dim
    return max(2, min(21, int(np.floor(max_pairs ** (1.0 / (2 * d))))))


def check_vertex_certificate(system: PolytopicSystem, cert, mode: str | None = None, gain=None,
                             grid_points: int | None = None) -> VerificationReport:
    """Margins of ``[[S_i, *], [M_i S_i, S_j]]`` for all vertex pairs (or grid pairs)."""
    mode = _mode_for(gain, mode)
    P = _lyapunov(cert)
    if len(P) != system.N:
        raise ValueError(f"certificate has {len(P)} matrices, system has {system.N} vertices")
    rep = VerificationReport(mode)
    N, n = system.N, system.n_x
    if gain is None or not gain.needs_next:
        S = [inv_guarded(Pi, what=f"P_{i+1}") for i, Pi in enumerate(P)]
        M = _closed(system, system.vertices, None if gain is None else gain.vertex_gains, mode)
        for i in range(N):
            for j in range(N):
                blk = np.block([[S[i], (M[i] @ S[i]).T], [M[i] @ S[i], S[j]]])
                rep.vertex_margins[(i, j, "vertex")] = min_eigenvalue(blk)
        return rep
    m = default_grid_points(system) if grid_points is None else int(grid_points)
    if m < 2:
        raise ValueError("grid_points must be at least 2")
    pts = system.params.grid(m)
    Pstack = np.asarray(P)
    Pg = np.einsum("kn,nab->kab", system.xi(pts).reshape(-1, N), Pstack)
    Sg = np.array([inv_guarded(Q, what="P(p)") for Q in Pg])
    Ag = np.einsum("kn,nab->kab", system.xi(pts).reshape(-1, N), system.vertices)
    ia, ib = np.meshgrid(np.arange(len(pts)), np.arange(len(pts)), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    for lo in range(0, ia.size, 2048):
        a, b = ia[lo:lo + 2048], ib[lo:lo + 2048]
        G = gain.evaluate_batch(pts[a], pts[b])
        MS = _closed(system, Ag[a], G, mode) @ Sg[a]
        blk = np.zeros((a.size, 2 * n, 2 * n))
        blk[:, :n, :n] = Sg[a]
        blk[:, n:, :n] = MS
        blk[:, :n, n:] = np.swapaxes(MS, 1, 2)
        blk[:, n:, n:] = Sg[b]
        for ka, kb, v in zip(a, b, min_eigenvalues(blk)):
            rep.vertex_margins[(int(ka), int(kb), "grid")] = float(v)
    return rep


def default_a3(P: list[np.ndarray], margin: float) -> float:
    """A decrease rate implied by a vertex margin ``margin`` of the S-form blocks.

    With ``z = P_i x`` and ``w = (z, -P_j M_i x)``, ``w' block w`` equals
    ``x' (P_i - M_i' P_j M_i) x`` and is at least ``margin * |P_i x|^2``; half of
    ``margin * min_i lambda_min(P_i)^2`` is used.
    """
    if not margin > 0:
        return 0.0
    lam = min(min_eigenvalue(Pi) for Pi in P)
    return 0.5 * margin * max(lam, 0.0) ** 2


def monte_carlo_descent(system: PolytopicSystem, cert, gain=None, num_seq: int = 1000, horizon: int = 50,
                        seed: int = 0, a3: float | None = None, mode: str | None = None,
                        grid_points: int | None = None, x0=None) -> VerificationReport:
    """Worst ``(V(p+, x+) - V(p, x) + a3 |x|^2) / |x|^2`` over random sequences.

    Parameters are drawn uniformly from the parameter set and initial states
    uniformly on the unit sphere unless ``x0`` (one state or one per sequence)
    is given. Steps with ``x = 0`` are skipped. Preview gains get ``p_{k+1}``
    from the same sequence, exactly as in simulation.
    """
    if num_seq < 1 or horizon < 1:
        raise ValueError("num_seq and horizon must be at least 1")
    mode = _mode_for(gain, mode)
    P = _lyapunov(cert)
    rep = check_vertex_certificate(system, P, mode, gain, grid_points)
    a3_used = default_a3(P, rep.min_margin) if a3 is None else float(a3)
    rng = np.random.default_rng(seed)
    d, N, n = system.params.dim, system.N, system.n_x
    params = system.params.sample(rng, num_seq * (horizon + 1)).reshape(num_seq, horizon + 1, d)
    if x0 is None:
        x = rng.standard_normal((num_seq, n))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, n), (num_seq, n)).copy()
    xi = system.xi(params.reshape(-1, d)).reshape(num_seq, horizon + 1, N)
    Pstack = np.asarray(P)
    worst = -np.inf
    for k in range(horizon):
        A = np.einsum("sn,nab->sab", xi[:, k], system.vertices)
        G = None
        if gain is not None:
            G = gain.evaluate_batch(params[:, k], params[:, k + 1]) if gain.needs_next \
                else gain.evaluate_batch(params[:, k])
        xn = np.einsum("sab,sb->sa", _closed(system, A, G, mode), x)
        Pk = np.einsum("sn,nab->sab", xi[:, k], Pstack)
        Pn = np.einsum("sn,nab->sab", xi[:, k + 1], Pstack)
        V = np.einsum("sa,sab,sb->s", x, Pk, x)
        Vn = np.einsum("sa,sab,sb->s", xn, Pn, xn)
        nx2 = np.einsum("sa,sa->s", x, x)
        live = nx2 > 0
        if np.any(live):
            worst = max(worst, float(np.max((Vn[live] - V[live] + a3_used * nx2[live]) / nx2[live])))
        # the dynamics are linear, so renormalising keeps the ratios and avoids underflow
        nrm = np.linalg.norm(xn, axis=1, keepdims=True)
        x = np.divide(xn, nrm, out=np.zeros_like(xn), where=nrm > 0)
    rep.mc_worst_ratio = worst if np.isfinite(worst) else 0.0
    rep.a3_used = a3_used
    rep.sequences_run = num_seq
    rep.horizon = horizon
    rep.seed = seed
    return rep


def lti_ground_truth(A, B=None, C=None, tol: float = 1e-9) -> dict:
    """PBH eigenvalue tests for detectability of ``(A, C)`` and stabilizability of ``(A, B)``.

    A pair is detectable iff ``rank [A - lam I; C] = n`` for every eigenvalue
    with ``|lam| >= 1``; stabilizability is the dual statement with ``[A - lam I, B]``.
    Missing ``B`` or ``C`` is treated as a zero matrix.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"A must be square, got {A.shape}")
    B = np.zeros((n, 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float)).reshape(n, -1)
    C = np.zeros((1, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, n)
    scale = max(1.0, np.linalg.norm(A, 2), np.linalg.norm(B, 2), np.linalg.norm(C, 2))

    def full_rank(M: np.ndarray) -> bool:
        return bool(np.linalg.svd(M, compute_uv=False)[-1] > tol * scale) if min(M.shape) >= n else False

    det = stab = True
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1:
            continue
        shifted = A - lam * np.eye(n)
        det = det and full_rank(np.vstack([shifted, C]))
        stab = stab and full_rank(np.hstack([shifted, B]))
    return {"detectable": det, "stabilizable": stab}
