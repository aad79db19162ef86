"""Dense symmetric-matrix helpers shared by the LMI layer, solver and checkers.

Everything here is a pure function on numpy arrays. Symmetric inputs are
symmetrised on ingest with ``(M + M.T) / 2``.
"""

from __future__ import annotations

import numpy as np

SQRT2 = np.sqrt(2.0)


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array."""
    A = np.atleast_2d(np.asarray(M, dtype=float))
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def sym(M) -> np.ndarray:
    """Symmetric part of a square matrix (exactly symmetric result)."""
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return 0.5 * (A + A.T)


def default_tol(M: np.ndarray, rel: float = 1e-8) -> float:
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    return rel * scale if scale > 0 else rel


def min_eigenvalue(M) -> float:
    S = sym(M)
    return float(np.linalg.eigvalsh(S)[0])


def min_eigenvalues(stack) -> np.ndarray:
    """Smallest eigenvalue of each symmetric part in a ``(k, n, n)`` stack."""
    M = np.asarray(stack, dtype=float)
    if M.ndim != 3 or M.shape[1] != M.shape[2]:
        raise ValueError(f"expected a (k, n, n) stack, got shape {M.shape}")
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))[:, 0]


def is_positive_definite(M, tol: float | None = None) -> bool:
    """True iff the smallest eigenvalue of ``M`` exceeds ``tol``.

    ``tol`` defaults to ``1e-8`` times the largest absolute entry.
    """
    S = sym(M)
    if tol is None:
        tol = default_tol(S)
    if tol <= 0:
        raise ValueError("tol must be positive")
    return min_eigenvalue(S) > tol


def spectral_radius(M) -> float:
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {A.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def svec_size(n: int) -> int:
    return n * (n + 1) // 2


def _triu(n: int):
    return np.triu_indices(n)


def svec(M) -> np.ndarray:
    """Upper triangle, row by row, off-diagonals scaled by sqrt(2).

    With this scaling ``svec(A) @ svec(B) == trace(A @ B)`` for symmetric A, B.
    """
    S = sym(M)
    i, j = _triu(S.shape[0])
    v = S[i, j].copy()
    v[i != j] *= SQRT2
    return v


def smat(v, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float).ravel()
    if n is None:
        n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if v.size != svec_size(n):
        raise ValueError(f"svec of a {n}x{n} matrix has {svec_size(n)} entries, got {v.size}")
    i, j = _triu(n)
    w = v.copy()
    w[i != j] /= SQRT2
    S = np.zeros((n, n))
    S[i, j] = w
    S[j, i] = w
    return S


def inv_guarded(M, max_cond: float = 1e12, what: str = "matrix") -> np.ndarray:
    """Inverse with a condition-number guard (raises ``np.linalg.LinAlgError``)."""
    A = as_matrix(M, what)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > max_cond:
        raise np.linalg.LinAlgError(f"{what} is numerically singular (cond={cond:.3e})")
    return np.linalg.inv(A)


def solve_guarded(A, B, max_cond: float = 1e12, what: str = "matrix") -> np.ndarray:
    """``A^{-1} B`` with the same guard as :func:`inv_guarded`."""
    A = as_matrix(A, what)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > max_cond:
        raise np.linalg.LinAlgError(f"{what} is numerically singular (cond={cond:.3e})")
    return np.linalg.solve(A, B)
