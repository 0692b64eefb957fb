"""Solutions phi_N, phi_T, v_P, the Green kernel and the resolvent as an integral operator.

For x > t the kernel is G(x, t, lam) = v_P(x, lam) phi_N(t, conj lam)*, and for
x < t it is phi_N(x, lam) v_P(t, conj lam)*.  Applying it splits into two
running integrals

    y(x) = v_P(x) A(x) + phi_N(x) B(x),
    A(x) = int_0^x phi_N(t, conj lam)* f(t) dt,   B(x) = int_x^T v_P(t, conj lam)* f(t) dt,

accumulated cell by cell with Gauss-Legendre rules.  B is summed from the
right so the decaying factor never meets a growing partner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .boundary import LIMIT_POINT, BoundaryTriplet, weyl_solution_basis
from .charm import _resolvent_factors, characterize
from .nev_pairs import BoundaryPair, PairGeometry
from .ode_engine import Problem, SolutionMatrix, gauss_nodes, gram, propagate_matrix

RESIDUAL_FLAG = 100.0


class ResolventError(RuntimeError):
    pass


def phi_n(problem: Problem, geom: PairGeometry, lam: complex, t_end: float,
          tol: float = 1e-10) -> SolutionMatrix:
    """Solution with initial data (-N0*; N1*); entire in lam."""
    return propagate_matrix(problem, lam, geom.phi_n_init, t_end, tol)


def phi_t(problem: Problem, geom: PairGeometry, lam: complex, t_end: float,
          tol: float = 1e-10) -> SolutionMatrix | None:
    """Solution started from the orthogonal completion columns of W' (None when empty)."""
    if geom.phi_t_init.shape[1] == 0:
        return None
    return propagate_matrix(problem, lam, geom.phi_t_init, t_end, tol)


@dataclass(frozen=True)
class VSolution:
    sol: object = field(repr=False)
    gamma_residual: float
    horizon: float


def v_p(problem: Problem, triplet: BoundaryTriplet, pair: BoundaryPair, lam: complex,
        tol: float | None = None) -> VSolution:
    """v_P = Z (C0 - C1 M)^{-1} restricted to the first k_hat columns.

    The residual measures C0 Gamma0 v - C1 Gamma1 v against [I; 0] using the
    states of v itself at 0 and at the truncation point.
    """
    lam = complex(lam)
    w = weyl_solution_basis(problem, triplet, lam, tol)
    C0, C1 = pair(lam)
    K = C0 - C1 @ w.M
    k = pair.k_hat
    _resolvent_factors(C0, C1, w.M)  # raises when K is numerically singular
    X = np.linalg.solve(K, np.eye(pair.m)[:, :k])
    v = w.Z.combine(X)
    g0, g1 = triplet.gamma_of(v)
    target = np.eye(pair.m)[:, :k]
    res = float(np.abs(C0 @ g0 - C1 @ g1 - target).max())
    return VSolution(v, res, float(w.horizon))


def _tail_norm(sol, T: float) -> float:
    """Estimate of int_T^inf |y|^2 from the exponential decay over the last stretch."""
    lo, hi = sol.span
    T = min(T, hi)
    a = max(lo, T - 0.1 * (T - lo))
    ya = np.abs(sol.y(a)).max()
    yT = np.abs(sol.y(T)).max()
    if yT == 0.0:
        return 0.0
    if ya <= yT:
        return float("inf")
    rate = np.log(ya / yT) / (T - a)
    return float(yT ** 2 / (2 * rate))


@dataclass(frozen=True)
class KernelBundle:
    lam: complex
    phiN: SolutionMatrix = field(repr=False)
    phiT: SolutionMatrix | None = field(repr=False)
    vP: object = field(repr=False)
    phiN_c: SolutionMatrix = field(repr=False)
    vP_c: object = field(repr=False)
    mP: np.ndarray = field(repr=False)
    horizon: float
    bc_residual: float
    tail: float
    problem: Problem = field(repr=False)

    @property
    def k_hat(self) -> int:
        return self.mP.shape[0]


def kernel_bundle(problem: Problem, triplet: BoundaryTriplet, pair: BoundaryPair,
                  geom: PairGeometry, lam: complex, tol: float | None = None) -> KernelBundle:
    """phi_N, phi_T, v_P at lam, plus phi_N and v_P at conj(lam) built independently."""
    lam = complex(lam)
    tol = tol or triplet.tol
    singular = triplet.endpoint.kind == LIMIT_POINT
    if singular and lam.imag == 0:
        raise ResolventError("limit-point problems need a non-real lambda")
    v = v_p(problem, triplet, pair, lam, tol)
    vc = v if lam.imag == 0 else v_p(problem, triplet, pair, lam.conjugate(), tol)
    T = min(v.sol.span[1], vc.sol.span[1])
    pn = phi_n(problem, geom, lam, T, tol)
    pnc = pn if lam.imag == 0 else phi_n(problem, geom, lam.conjugate(), T, tol)
    pt = phi_t(problem, geom, lam, T, tol)
    mP = characterize(problem, triplet, pair, geom, lam, tol).mP
    tail = _tail_norm(v.sol, T) if singular else 0.0
    return KernelBundle(lam, pn, pt, v.sol, pnc, vc.sol, mP, float(T),
                        max(v.gamma_residual, vc.gamma_residual), tail, problem)


def reconstruction_defect(bundle: KernelBundle, geom: PairGeometry, t: np.ndarray) -> float:
    """max |v_P - (phi_N (m_P - J1/2) - phi_T J2)| over the points t (state level)."""
    v = bundle.vP(t)
    rec = bundle.phiN(t) @ (bundle.mP - 0.5 * geom.J1)
    if bundle.phiT is not None:
        rec = rec - bundle.phiT(t) @ geom.J2
    return float(np.abs(v - rec).max())


def green_kernel(bundle: KernelBundle, x: float, t: float) -> complex:
    """G_P(x, t, lam); the diagonal x = t takes the x > t branch."""
    if x >= t:
        return complex(bundle.vP.y(x) @ bundle.phiN_c.y(t).conj())
    return complex(bundle.phiN.y(x) @ bundle.vP_c.y(t).conj())


@dataclass(frozen=True)
class ResolventResult:
    x: np.ndarray
    y: np.ndarray
    states: np.ndarray = field(repr=False)
    residual: float
    tail: float
    flagged: bool


def _as_callable(f) -> Callable:
    if callable(f):
        return f
    raise TypeError("f must be a callable of t")


def _cell_integrals(sol, f, breaks: np.ndarray, conj: bool, q: int) -> np.ndarray:
    """int over each cell of sol.y(t)^(*) f(t), shape (cells, k)."""
    t, w = gauss_nodes(breaks, q)
    y = sol.y(t)
    fv = np.asarray(f(t), dtype=complex) * np.ones_like(t)
    vals = (np.conj(y) if conj else y) * (w * fv)[:, None]
    return vals.reshape(len(breaks) - 1, q, -1).sum(axis=1)


def apply_resolvent(bundle: KernelBundle, f, x_end: float | None = None, cells: int = 4000,
                    q: int = 8, tol: float = 1e-8) -> ResolventResult:
    """y = R(lam) f on a uniform grid over [0, x_end] with a finite-difference residual.

    The residual is ||y' - A(lam) y + e_n f||_2 / ||f||_2 on interior grid
    points, with fourth-order central differences of the quasi-derivative
    stack.  Results above RESIDUAL_FLAG * tol are flagged.
    """
    f = _as_callable(f)
    T = bundle.horizon if x_end is None else min(float(x_end), bundle.horizon)
    x = np.linspace(0.0, T, cells + 1)
    a_cells = _cell_integrals(bundle.phiN_c, f, x, True, q)
    b_cells = _cell_integrals(bundle.vP_c, f, x, True, q)
    A = np.vstack([np.zeros((1, a_cells.shape[1])), np.cumsum(a_cells, axis=0)])
    B = np.vstack([np.cumsum(b_cells[::-1], axis=0)[::-1], np.zeros((1, b_cells.shape[1]))])
    V = bundle.vP(x)
    P = bundle.phiN(x)
    states = np.einsum("tik,tk->ti", V, A) + np.einsum("tik,tk->ti", P, B)
    y = states[:, 0]
    res = fd_residual(bundle.problem, bundle.lam, x, states, f)
    return ResolventResult(x, y, states, res, bundle.tail, bool(res > RESIDUAL_FLAG * tol))


def fd_residual(problem: Problem, lam: complex, x: np.ndarray, states: np.ndarray, f: Callable) -> float:
    """Relative L2 defect of the first-order system with source e_n f on a uniform grid."""
    h = x[1] - x[0]
    fv = np.asarray(f(x), dtype=complex) * np.ones_like(x)
    d = (-states[4:] + 8 * states[3:-1] - 8 * states[1:-3] + states[:-4]) / (12 * h)
    xi = x[2:-2]
    si = states[2:-2]
    rhs = np.empty_like(si)
    row = problem.lam_row
    for i, t in enumerate(xi):
        rhs[i] = problem.system(t) @ si[i]
    rhs[:, row] -= lam * si[:, 0] + fv[2:-2]
    num = np.sqrt(np.sum(np.abs(d - rhs) ** 2))
    den = np.sqrt(np.sum(np.abs(fv[2:-2]) ** 2))
    return float(num / den) if den > 0 else float(num)


def canonical_identity_defect(problem, triplet, pair, geom, lam: complex, mu: complex,
                              tol: float | None = None) -> tuple[float, float]:
    """|m(mu) - m(lam)* - (mu - conj lam) int v(lam)* v(mu)| and the tail bound used."""
    a = v_p(problem, triplet, pair, lam, tol)
    b = v_p(problem, triplet, pair, mu, tol)
    T = min(a.sol.span[1], b.sol.span[1])
    G = gram(a.sol, b.sol, 0.0, T)
    ma = characterize(problem, triplet, pair, geom, lam, tol).mP
    mb = characterize(problem, triplet, pair, geom, mu, tol).mP
    d = mb - ma.conj().T - (mu - np.conj(lam)) * G
    tail = 0.0
    if triplet.endpoint.kind == LIMIT_POINT:
        tail = abs(mu - np.conj(lam)) * np.sqrt(_tail_norm(a.sol, T) * _tail_norm(b.sol, T))
    return float(np.abs(d).max()), float(tail)


def norm_inequality_defect(problem, triplet, pair, geom, lam: complex, tol: float | None = None) -> float:
    """Smallest eigenvalue of Im m_P / Im lam - int v_P* v_P (should be >= 0)."""
    v = v_p(problem, triplet, pair, lam, tol)
    G = gram(v.sol, v.sol, 0.0, v.sol.span[1])
    mP = characterize(problem, triplet, pair, geom, lam, tol).mP
    D = (mP - mP.conj().T) / (2j * complex(lam).imag) - G
    return float(np.linalg.eigvalsh((D + D.conj().T) / 2).min())


__all__ = [
    "KernelBundle", "ResolventResult", "ResolventError", "VSolution",
    "phi_n", "phi_t", "v_p", "kernel_bundle", "reconstruction_defect", "green_kernel",
    "apply_resolvent", "fd_residual", "canonical_identity_defect", "norm_inequality_defect",
]
