"""Matrix solutions of l[y] = lambda*y in quasi-derivative form.

The operator is l[y] = sum_k (-1)^k (p_{n-k} y^{(k)})^{(k)} + p_n y with
n in {1, 2}.  A state vector stacks

    y(1) = (y^[0], ..., y^[n-1]),   y(2) = (y^[2n-1], ..., y^[n])

so that for n = 1 it is (y, p0*y') and for n = 2 it is
(y, y', -(p0 y'')' + p1 y', p0 y'').  Integration is delegated to
scipy's DOP853 pair with dense output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import DOP853, solve_ivp

from .expr_dsl import Expression, ExprDomainError, parse_expr


class PropagationError(RuntimeError):
    """Integration failed; ``t`` is where it stopped."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t!r})")
        self.t = t


@dataclass(frozen=True)
class Problem:
    """Differential expression of order 2n on [0, b>.

    ``closed`` is the endpoint hint: True means b is a regular closed end,
    False means treat b as singular/open, None lets the classifier decide.
    """

    n: int
    coeffs: tuple[Expression, ...]
    b: float = math.inf
    closed: bool | None = None
    name: str = ""
    _const: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only orders 2 and 4 (n = 1, 2) are supported")
        if len(self.coeffs) != self.n + 1:
            raise ValueError(f"expected {self.n + 1} coefficients p0..p{self.n}")
        if not self.b > 0:
            raise ValueError("right endpoint b must be positive")
        if all(c.is_constant for c in self.coeffs):
            vals = np.array([c(0.0) for c in self.coeffs])
            object.__setattr__(self, "_const", vals)

    @classmethod
    def from_strings(cls, coeffs: Sequence[str], b: float = math.inf,
                     closed: bool | None = None, name: str = "") -> "Problem":
        return cls(len(coeffs) - 1, tuple(parse_expr(c) for c in coeffs), b, closed, name)

    @property
    def dim(self) -> int:
        return 2 * self.n

    def p(self, t: float) -> np.ndarray:
        if self._const is not None:
            return self._const
        return np.array([c(t) for c in self.coeffs], dtype=float)

    def system(self, t: float) -> np.ndarray:
        """lambda-free part A0(t) of A(t, lambda) = A0(t) - lambda*E."""
        p = self.p(t)
        if p[0] == 0.0:
            raise PropagationError("leading coefficient p0 vanishes", t)
        if self.n == 1:
            return np.array([[0.0, 1.0 / p[0]], [p[1], 0.0]])
        a = np.zeros((4, 4))
        a[0, 1] = 1.0             # y' = y^[1]
        a[1, 3] = 1.0 / p[0]      # (y^[1])' = y^[2]/p0
        a[2, 0] = p[2]            # (y^[3])' = (p2 - lam) y
        a[3, 1] = p[1]            # (y^[2])' = p1 y^[1] - y^[3]
        a[3, 2] = -1.0
        return a

    @property
    def lam_row(self) -> int:
        """Row of the state that carries the -lambda*y term (also where f enters)."""
        return self.n


@dataclass(frozen=True)
class QuasiState:
    t: float
    y1: np.ndarray
    y2: np.ndarray


def lagrange_bracket(u: QuasiState, v: QuasiState) -> complex:
    """[u, v] = (u1, v2) - (u2, v1) with (a, b) = sum a*conj(b)."""
    if u.t != v.t:
        raise ValueError("states taken at different points")
    if not (len(u.y1) == len(u.y2) == len(v.y1) == len(v.y2)):
        raise ValueError("dimension mismatch")
    return complex(np.dot(u.y1, np.conj(v.y2)) - np.dot(u.y2, np.conj(v.y1)))


def bracket_matrix(U: np.ndarray, V: np.ndarray, n: int) -> np.ndarray:
    """Entry (i, j) is [u_i, v_j] for the columns of 2n x k state matrices."""
    return U[:n].T @ np.conj(V[n:]) - U[n:].T @ np.conj(V[:n])


def wronskian_matrix(U: np.ndarray, V: np.ndarray, n: int) -> np.ndarray:
    """Bilinear bracket (no conjugation); constant for two solutions at the same lambda."""
    return U[:n].T @ V[n:] - U[n:].T @ V[:n]


@dataclass(frozen=True)
class SolutionMatrix:
    """Propagated 2n x k solution of l[y] = lam*y.

    ``grid`` is ascending; ``t0`` is where the initial matrix was imposed
    (0 for forward shots, the horizon for backward ones).
    """

    lam: complex
    n: int
    grid: np.ndarray
    states: np.ndarray
    interp: Callable | None = field(repr=False, default=None)
    coef: np.ndarray | None = field(repr=False, default=None)
    base_cols: int = 0
    t0: float = 0.0
    tol: float = 0.0

    @property
    def columns(self) -> int:
        return self.states.shape[2]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def __call__(self, t):
        """State matrix at t: (2n, k) for scalar t, (len(t), 2n, k) otherwise."""
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.span
        if np.any(tt < lo - 1e-12 * max(1.0, abs(lo))) or np.any(tt > hi + 1e-12 * max(1.0, abs(hi))):
            raise ValueError(f"evaluation outside the propagated span [{lo}, {hi}]")
        raw = np.asarray(self.interp(np.clip(tt, lo, hi)))  # (2n*k0, len)
        base = raw.T.reshape(len(tt), self.base_cols, 2 * self.n).transpose(0, 2, 1)
        out = base if self.coef is None else base @ self.coef
        return out[0] if scalar else out

    def y(self, t):
        """Function values (first quasi-derivative y^[0]) of every column."""
        s = self(t)
        return s[..., 0, :]

    def state(self, t: float, column: int = 0) -> QuasiState:
        s = self(t)
        return QuasiState(float(t), s[: self.n, column].copy(), s[self.n:, column].copy())

    def combine(self, C: np.ndarray) -> "SolutionMatrix":
        """Solution with columns Y @ C."""
        C = np.asarray(C, dtype=complex)
        coef = C if self.coef is None else self.coef @ C
        return SolutionMatrix(self.lam, self.n, self.grid, self.states @ C, self.interp,
                              coef, self.base_cols, self.t0, self.tol)


@dataclass(frozen=True)
class JoinedSolution:
    """Columns of several solutions at one lambda, side by side, times ``coef``.

    Quacks like :class:`SolutionMatrix` for evaluation, quadrature and
    ``combine``; used when different columns come from different shots.
    """

    parts: tuple[SolutionMatrix, ...]
    coef: np.ndarray | None = field(repr=False, default=None)

    @property
    def lam(self) -> complex:
        return self.parts[0].lam

    @property
    def n(self) -> int:
        return self.parts[0].n

    @property
    def tol(self) -> float:
        return max(p.tol for p in self.parts)

    @property
    def grid(self) -> np.ndarray:
        return reduce(np.union1d, [p.grid for p in self.parts])

    @property
    def span(self) -> tuple[float, float]:
        return max(p.span[0] for p in self.parts), min(p.span[1] for p in self.parts)

    @property
    def columns(self) -> int:
        k = sum(p.columns for p in self.parts)
        return k if self.coef is None else self.coef.shape[1]

    @property
    def states(self) -> np.ndarray:
        return self(self.grid)

    def __call__(self, t):
        out = np.concatenate([p(t) for p in self.parts], axis=-1)
        return out if self.coef is None else out @ self.coef

    def y(self, t):
        return self(t)[..., 0, :]

    def state(self, t: float, column: int = 0) -> QuasiState:
        s = self(t)
        return QuasiState(float(t), s[: self.n, column].copy(), s[self.n:, column].copy())

    def combine(self, C: np.ndarray) -> "JoinedSolution":
        C = np.asarray(C, dtype=complex)
        return JoinedSolution(self.parts, C if self.coef is None else self.coef @ C)



class _GroupedDOP853(DOP853):
    """DOP853 with a max-over-columns error norm and error-per-unit-step control.

    ``group`` consecutive components form one solution column; the step is
    accepted when every column's RMS error estimate is within tolerance.
    Dividing by min(|h|, 1) makes the global error scale like the
    tolerance, so tightening tol by 2 buys at least a factor 2.
    """

    group = 2

    def _estimate_error_norm(self, K, h, scale):
        e5 = (K.T @ self.E5 / scale).reshape(-1, self.group)
        e3 = (K.T @ self.E3 / scale).reshape(-1, self.group)
        n5 = np.sum(np.abs(e5) ** 2, axis=1)
        n3 = np.sum(np.abs(e3) ** 2, axis=1)
        den = n5 + 0.01 * n3
        safe = np.where(den > 0, den, 1.0)
        r = np.where(den > 0, n5 / np.sqrt(safe * self.group), 0.0)
        return float(np.max(r)) * abs(h) / min(abs(h), 1.0)


_SOLVERS: dict[int, type] = {}


def _solver(group: int) -> type:
    if group not in _SOLVERS:
        _SOLVERS[group] = type(f"GroupedDOP853_{group}", (_GroupedDOP853,), {"group": group})
    return _SOLVERS[group]


def _rhs(problem: Problem, lams: np.ndarray, shape: tuple[int, ...]):
    """Right-hand side on the flattened (B, k, 2n) layout, one column per group."""
    row = problem.lam_row

    def f(t, y):
        Y = y.reshape(shape)
        try:
            A0 = problem.system(t)
        except ExprDomainError as exc:
            raise PropagationError(f"coefficient domain error: {exc}", t) from exc
        dY = Y @ A0.T
        dY[..., row] -= lams[:, None] * Y[..., 0]
        return dY.ravel()

    return f


def _check_span(problem: Problem, t_start: float, t_end: float, tol: float) -> None:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if problem.b < math.inf and max(t_start, t_end) > problem.b * (1 + 1e-14):
        raise ValueError("propagation beyond the right endpoint")
    if min(t_start, t_end) < 0:
        raise ValueError("propagation left of 0")


def propagate_matrix(problem: Problem, lam: complex, init, t_end: float, tol: float = 1e-10,
                     t_start: float = 0.0) -> SolutionMatrix:
    """Propagate the 2n x k initial matrix ``init`` from ``t_start`` to ``t_end``.

    Works in either direction.  The returned object interpolates the
    solution anywhere between the two points.
    """
    _check_span(problem, t_start, t_end, tol)
    init = np.asarray(init, dtype=complex)
    if init.ndim == 1:
        init = init[:, None]
    if init.shape[0] != problem.dim:
        raise ValueError(f"initial matrix must have {problem.dim} rows")
    lam = complex(lam)
    dim, k = init.shape
    shape = (1, k, dim)
    sol = solve_ivp(_rhs(problem, np.array([lam]), shape), (t_start, t_end), init.T.ravel(),
                    method=_solver(dim), rtol=tol, atol=tol, dense_output=True)
    if sol.status != 0:
        raise PropagationError(f"integration failed: {sol.message}", float(sol.t[-1]))
    states = sol.y.T.reshape(len(sol.t), k, dim).transpose(0, 2, 1).copy()
    states[0] = init
    order = np.argsort(sol.t, kind="stable")
    return SolutionMatrix(lam, problem.n, sol.t[order], states[order], sol.sol, None,
                          k, float(t_start), tol)


def propagate_endpoints(problem: Problem, lams, init, t_start: float, t_end: float,
                        tol: float = 1e-10, chunk: int = 512) -> np.ndarray:
    """Endpoint states for a batch of lambdas, shape (B, 2n, k).

    Each chunk is one stacked system with a common step; lambdas are
    sorted by modulus first so that cheap ones share cheap steps.  Error
    control is per column, so batching does not loosen the tolerance.
    """
    _check_span(problem, t_start, t_end, tol)
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    init = np.asarray(init, dtype=complex)
    if init.ndim == 2:
        init = np.broadcast_to(init, (len(lams),) + init.shape)
    B, dim, k = init.shape
    out = np.empty((B, dim, k), dtype=complex)
    order = np.argsort(np.abs(lams), kind="stable")
    for lo in range(0, B, chunk):
        idx = order[lo:lo + chunk]
        y0 = np.ascontiguousarray(init[idx].transpose(0, 2, 1))
        sol = solve_ivp(_rhs(problem, lams[idx], y0.shape), (t_start, t_end), y0.ravel(),
                        method=_solver(dim), rtol=tol, atol=tol)
        if sol.status != 0:
            raise PropagationError(f"integration failed: {sol.message}", float(sol.t[-1]))
        out[idx] = sol.y[:, -1].reshape(y0.shape).transpose(0, 2, 1)
    return out


# -- quadrature ---------------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_nodes(breaks, q: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on every interval between sorted breakpoints."""
    if q not in _GL_CACHE:
        _GL_CACHE[q] = np.polynomial.legendre.leggauss(q)
    x, w = _GL_CACHE[q]
    br = np.asarray(breaks, dtype=float)
    a, b = br[:-1], br[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def step_breaks(grid: np.ndarray, a: float, b: float, max_width: float | None = None) -> np.ndarray:
    inner = grid[(grid > a) & (grid < b)]
    br = np.concatenate(([a], inner, [b]))
    if max_width is not None:
        pieces = [br[:1]]
        for lo, hi in zip(br[:-1], br[1:]):
            m = max(1, int(math.ceil((hi - lo) / max_width)))
            pieces.append(np.linspace(lo, hi, m + 1)[1:])
        br = np.concatenate(pieces)
    return br


def gram(s1: SolutionMatrix, s2: SolutionMatrix, a: float, b: float, q: int = 8) -> np.ndarray:
    """Matrix of integrals int_a^b conj(y_i(t)) y_j(t) dt over the columns."""
    if b <= a:
        return np.zeros((s1.columns, s2.columns), dtype=complex)
    grid = np.union1d(s1.grid, s2.grid)
    t, w = gauss_nodes(step_breaks(grid, a, b), q)
    y1 = s1.y(t)
    y2 = s2.y(t)
    return np.einsum("t,ti,tj->ij", w, np.conj(y1), y2)


def truncated_l2_norm(s: SolutionMatrix, column: int, T: float) -> float:
    """Squared truncated norm int_{t0}^T |y(t)|^2 dt of one column."""
    lo, hi = s.span
    if T > hi * (1 + 1e-12) + 1e-12:
        raise ValueError("T beyond the propagated grid")
    col = s.combine(np.eye(s.columns)[:, [column]])
    return float(gram(col, col, lo, min(T, hi))[0, 0].real)


__all__ = [
    "Problem", "QuasiState", "SolutionMatrix", "JoinedSolution", "PropagationError",
    "lagrange_bracket", "bracket_matrix", "wronskian_matrix",
    "propagate_matrix", "propagate_endpoints", "gauss_nodes", "step_breaks",
    "gram", "truncated_l2_norm",
]
