"""Affine block-matrix expressions, LMI problems and their compiled form.

Expressions are affine in the scalar components of the declared decision
variables. Each term stores an explicit sparse coefficient matrix mapping the
variable's components to the row-major ``vec`` of the expression value, so
``L @ X @ R``, transposes and block placement are all exact linear-algebra
operations on those coefficients.

Typical use::

    prob = LmiProblem()
    S = prob.sym_var("S_1", 4)
    prob.add_constraint(block([[S, S @ A.T], [A @ S, S]]), eps=1e-6)
    compiled = prob.compile()
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .matcore import SQRT2, svec_size


@dataclass(frozen=True)
class DecisionVar:
    id: int
    label: str
    shape: tuple[int, int]
    symmetric: bool
    offset: int  # position of the first scalar component in the problem vector

    @property
    def size(self) -> int:
        m, n = self.shape
        return svec_size(n) if self.symmetric else m * n

    def components(self) -> list[tuple[int, int]]:
        m, n = self.shape
        if self.symmetric:
            return [(i, j) for i in range(n) for j in range(i, n)]
        return [(i, j) for i in range(m) for j in range(n)]

    def basis(self) -> sp.csr_matrix:
        """Sparse map from component vector to row-major vec of the value."""
        m, n = self.shape
        rows, cols = [], []
        for k, (i, j) in enumerate(self.components()):
            rows.append(i * n + j)
            cols.append(k)
            if self.symmetric and i != j:
                rows.append(j * n + i)
                cols.append(k)
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(m * n, self.size))

    def value(self, comps) -> np.ndarray:
        comps = np.asarray(comps, dtype=float)
        return (self.basis() @ comps).reshape(self.shape)

    # arithmetic goes through AffineExpr
    __array_ufunc__ = None

    def expr(self) -> "AffineExpr":
        return AffineExpr.of(self)

    def __add__(self, o): return self.expr() + o
    def __radd__(self, o): return o + self.expr()
    def __sub__(self, o): return self.expr() - o
    def __rsub__(self, o): return AffineExpr.of(o) - self.expr()
    def __neg__(self): return -self.expr()
    def __mul__(self, s): return self.expr() * s
    def __rmul__(self, s): return self.expr() * s
    def __matmul__(self, R): return self.expr() @ R
    def __rmatmul__(self, L): return L @ self.expr()

    @property
    def T(self) -> "AffineExpr":
        return self.expr().T


def _transpose_rows(r: int, c: int) -> np.ndarray:
    # row k of vec(M.T) is row _transpose_rows[k] of vec(M)
    return np.arange(r * c).reshape(r, c).T.ravel()


class AffineExpr:
    """``const + sum_v coeff_v @ comps_v`` reshaped to ``shape`` (row-major)."""

    __array_ufunc__ = None  # let ndarray @ expr dispatch to __rmatmul__

    def __init__(self, const, terms: dict[int, sp.csr_matrix] | None = None,
                 vars: dict[int, DecisionVar] | None = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = dict(terms or {})
        self.vars = dict(vars or {})
        r, c = self.shape
        for vid, coef in self.terms.items():
            if coef.shape != (r * c, self.vars[vid].size):
                raise ValueError("coefficient shape does not match expression")

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @classmethod
    def of(cls, item) -> "AffineExpr":
        if isinstance(item, AffineExpr):
            return item
        if isinstance(item, DecisionVar):
            return cls(np.zeros(item.shape), {item.id: item.basis()}, {item.id: item})
        return cls(item)

    def _map(self, const, op) -> "AffineExpr":
        return AffineExpr(const, {v: sp.csr_matrix(op(c)) for v, c in self.terms.items()}, self.vars)

    def __add__(self, other) -> "AffineExpr":
        o = AffineExpr.of(other)
        if o.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} + {o.shape}")
        terms = dict(self.terms)
        for v, c in o.terms.items():
            terms[v] = terms[v] + c if v in terms else c
        return AffineExpr(self.const + o.const, terms, {**self.vars, **o.vars})

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return self._map(-self.const, lambda c: -c)

    def __sub__(self, other) -> "AffineExpr":
        return self + (-AffineExpr.of(other))

    def __rsub__(self, other) -> "AffineExpr":
        return AffineExpr.of(other) - self

    def __mul__(self, s: float) -> "AffineExpr":
        s = float(s)
        return self._map(s * self.const, lambda c: s * c)

    __rmul__ = __mul__

    def __rmatmul__(self, L) -> "AffineExpr":
        L = np.atleast_2d(np.asarray(L, dtype=float))
        r, c = self.shape
        if L.shape[1] != r:
            raise ValueError(f"cannot left-multiply {self.shape} by {L.shape}")
        K = sp.kron(sp.csr_matrix(L), sp.identity(c), format="csr")
        return self._map(L @ self.const, lambda co: K @ co)

    def __matmul__(self, R) -> "AffineExpr":
        if isinstance(R, (AffineExpr, DecisionVar)):
            raise TypeError("product of two affine expressions is not affine")
        R = np.atleast_2d(np.asarray(R, dtype=float))
        r, c = self.shape
        if R.shape[0] != c:
            raise ValueError(f"cannot right-multiply {self.shape} by {R.shape}")
        K = sp.kron(sp.identity(r), sp.csr_matrix(R.T), format="csr")
        return self._map(self.const @ R, lambda co: K @ co)

    @property
    def T(self) -> "AffineExpr":
        r, c = self.shape
        idx = _transpose_rows(r, c)
        return self._map(self.const.T, lambda co: co[idx])

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        r, c = self.shape
        if r != c or not np.allclose(self.const, self.const.T, atol=tol, rtol=0):
            return False
        idx = _transpose_rows(r, c)
        for co in self.terms.values():
            d = co - co[idx]
            if d.nnz and np.max(np.abs(d.data)) > tol:
                return False
        return True

    def evaluate(self, values: dict[int, np.ndarray]) -> np.ndarray:
        """Value for component vectors keyed by variable id."""
        out = self.const.ravel().copy()
        for v, co in self.terms.items():
            out += co @ np.asarray(values[v], dtype=float)
        return out.reshape(self.shape)


def He(X) -> AffineExpr:
    """``X + X.T``."""
    E = AffineExpr.of(X)
    return E + E.T


def block(rows: Sequence[Sequence]) -> AffineExpr:
    """Assemble a block matrix. ``None`` or ``0`` entries are zero blocks.

    Every block row must contain at least one entry with a known shape, and
    likewise every block column.
    """
    nr, nc = len(rows), len(rows[0])
    heights = [None] * nr
    widths = [None] * nc
    for bi, row in enumerate(rows):
        if len(row) != nc:
            raise ValueError("ragged block layout")
        for bj, item in enumerate(row):
            if item is None or (np.isscalar(item) and item == 0):
                continue
            h, w = AffineExpr.of(item).shape
            if heights[bi] not in (None, h) or widths[bj] not in (None, w):
                raise ValueError(f"inconsistent block size at ({bi}, {bj})")
            heights[bi], widths[bj] = h, w
    if None in heights or None in widths:
        raise ValueError("cannot infer block sizes")
    R, C = sum(heights), sum(widths)
    ro = np.concatenate([[0], np.cumsum(heights)])
    co = np.concatenate([[0], np.cumsum(widths)])

    const = np.zeros((R, C))
    parts: dict[int, list[sp.coo_matrix]] = {}
    vars_: dict[int, DecisionVar] = {}
    for bi, row in enumerate(rows):
        for bj, item in enumerate(row):
            if item is None or (np.isscalar(item) and item == 0):
                continue
            E = AffineExpr.of(item)
            h, w = E.shape
            const[ro[bi]:ro[bi] + h, co[bj]:co[bj] + w] = E.const
            ii, jj = np.divmod(np.arange(h * w), w)
            new_rows = (ro[bi] + ii) * C + (co[bj] + jj)
            for v, coef in E.terms.items():
                c = coef.tocoo()
                parts.setdefault(v, []).append(
                    sp.coo_matrix((c.data, (new_rows[c.row], c.col)), shape=(R * C, c.shape[1])))
                vars_[v] = E.vars[v]
    terms = {v: sp.csr_matrix(sum(ps[1:], ps[0])) for v, ps in parts.items()}
    return AffineExpr(const, terms, vars_)


@dataclass
class Constraint:
    expr: AffineExpr
    eps: float | None
    label: str


@dataclass(frozen=True)
class CompiledBlock:
    label: str
    dim: int
    const: np.ndarray           # constant block after the eps shift
    var_index: np.ndarray       # global scalar indices that touch this block
    coeffs: sp.csc_matrix       # column k = svec of the coefficient of var_index[k]
    eps: float

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        from .matcore import smat
        return self.const + smat(self.coeffs @ x[self.var_index], self.dim)


@dataclass(frozen=True)
class CompiledFeasibility:
    """``F(x) = F0 + sum_k x_k F_k``, block diagonal over the constraints."""

    blocks: tuple[CompiledBlock, ...]
    num_scalars: int
    index_map: tuple[tuple[str, tuple[int, int]], ...]

    def evaluate_blocks(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.num_scalars:
            raise ValueError(f"assignment has {x.size} entries, expected {self.num_scalars}")
        return [b.evaluate(x) for b in self.blocks]

    def dump(self, path) -> None:
        """Write one line per nonzero:
        ``constraint_label block_row block_col var_label component coeff``.

        Entries are listed for the upper triangle of each block; the constant
        term uses ``const`` and ``-`` for the variable and component fields.
        """
        lines = []
        for b in self.blocks:
            iu, ju = np.triu_indices(b.dim)
            scale = np.where(iu == ju, 1.0, 1.0 / SQRT2)
            for i, j in zip(*np.nonzero(np.triu(b.const))):
                lines.append(f"{b.label} {i} {j} const - {b.const[i, j]:.17g}")
            C = b.coeffs.tocoo()
            for r, k, val in sorted(zip(C.row, C.col, C.data)):
                lab, (p, q) = self.index_map[b.var_index[k]]
                lines.append(f"{b.label} {iu[r]} {ju[r]} {lab} {p},{q} {val * scale[r]:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def _vec_to_svec(n: int) -> sp.csr_matrix:
    """Rows pick the upper triangle of a row-major vec, scaled for svec."""
    iu, ju = np.triu_indices(n)
    data = np.where(iu == ju, 1.0, SQRT2)
    return sp.csr_matrix((data, (np.arange(iu.size), iu * n + ju)), shape=(iu.size, n * n))


class LmiProblem:
    """Registry of decision variables and strict LMI constraints."""

    def __init__(self, name: str = ""):
        self.name = name
        self.vars: list[DecisionVar] = []
        self.constraints: list[Constraint] = []
        self._labels: set[str] = set()

    @property
    def num_scalars(self) -> int:
        return sum(v.size for v in self.vars)

    def declare(self, label: str, shape: tuple[int, int], symmetric: bool) -> DecisionVar:
        m, n = shape
        if m < 1 or n < 1:
            raise ValueError(f"invalid dimensions {shape} for {label}")
        if symmetric and m != n:
            raise ValueError(f"symmetric variable {label} must be square")
        if label in self._labels:
            raise ValueError(f"duplicate variable label {label!r}")
        v = DecisionVar(len(self.vars), label, (m, n), symmetric, self.num_scalars)
        self.vars.append(v)
        self._labels.add(label)
        return v

    def sym_var(self, label: str, n: int) -> DecisionVar:
        return self.declare(label, (n, n), True)

    def rect_var(self, label: str, m: int, n: int) -> DecisionVar:
        return self.declare(label, (m, n), False)

    def add_constraint(self, expr, eps: float | None = None, label: str | None = None) -> None:
        """Record ``expr - eps*I >= 0``.

        ``eps=None`` picks ``1e-6 * max(1, largest constant entry)`` over the
        whole problem at compile time.
        """
        E = AffineExpr.of(expr)
        if eps is not None and eps < 0:
            raise ValueError("eps must be non-negative")
        if not E.is_symmetric():
            raise ValueError(f"constraint {label!r} is not a symmetric square expression")
        for vid, var in E.vars.items():
            if vid >= len(self.vars) or self.vars[vid] is not var:
                raise ValueError(f"constraint {label!r} uses undeclared variable {var.label!r}")
        self.constraints.append(Constraint(E, eps, label or f"c{len(self.constraints)}"))

    def default_eps(self) -> float:
        scale = max((np.max(np.abs(c.expr.const)) for c in self.constraints), default=0.0)
        return 1e-6 * max(1.0, float(scale))

    def compile(self) -> CompiledFeasibility:
        if not self.constraints:
            raise ValueError("cannot compile a problem without constraints")
        default = self.default_eps()
        blocks = []
        for con in self.constraints:
            E = con.expr
            n = E.shape[0]
            eps = default if con.eps is None else con.eps
            S = _vec_to_svec(n)
            vids = sorted(E.terms)
            idx = np.concatenate([np.arange(self.vars[v].offset, self.vars[v].offset + self.vars[v].size)
                                  for v in vids]) if vids else np.zeros(0, dtype=int)
            if vids:
                coeffs = sp.hstack([S @ E.terms[v] for v in vids], format="csc")
            else:
                coeffs = sp.csc_matrix((svec_size(n), 0))
            coeffs.eliminate_zeros()
            blocks.append(CompiledBlock(con.label, n, E.const - eps * np.eye(n),
                                        idx.astype(int), coeffs, eps))
        index_map = tuple((v.label, ij) for v in self.vars for ij in v.components())
        return CompiledFeasibility(tuple(blocks), self.num_scalars, index_map)

    def unpack(self, x) -> dict[str, np.ndarray]:
        """Split an assignment vector into variable values keyed by label."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.num_scalars:
            raise ValueError(f"assignment has {x.size} entries, expected {self.num_scalars}")
        return {v.label: v.value(x[v.offset:v.offset + v.size]) for v in self.vars}

    def evaluate(self, x) -> list[np.ndarray]:
        """Constraint expressions (without the eps shift) at assignment ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        vals = {v.id: x[v.offset:v.offset + v.size] for v in self.vars}
        return [c.expr.evaluate(vals) for c in self.constraints]

