"""Endpoint classification, decomposing boundary triplet and the Weyl matrix.

Boundary maps:  Gamma0 y = {y(2)(0), Gamma0' y},  Gamma1 y = {-y(1)(0), Gamma1' y}.
The endpoint maps Gamma0', Gamma1' are linear functionals of the state at
``b_trunc`` and are stored as matrices ``B0``, ``B1`` (n_b x 2n):

* regular b:        Gamma0' y = y(2)(b),  Gamma1' y = y(1)(b)
* limit circle:     Gamma0' y = [y, w2](b_trunc),  Gamma1' y = [y, w1](b_trunc)
                    with real reference solutions at the anchor energy
* limit point:      no endpoint maps (n_b = 0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .expr_dsl import ExprDomainError
from .ode_engine import (JoinedSolution, Problem, PropagationError, SolutionMatrix, bracket_matrix, gram,
                         propagate_endpoints, propagate_matrix)

REGULAR, LIMIT_CIRCLE, LIMIT_POINT = "Regular", "LimitCircle", "LimitPoint"


class ClassificationError(RuntimeError):
    pass


class TripletError(RuntimeError):
    pass


class WeylError(RuntimeError):
    """Singular matching system or unstable horizon extrapolation."""


@dataclass(frozen=True)
class EndpointClass:
    kind: str
    n_b: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    @classmethod
    def of(cls, kind: str, n: int, **diag) -> "EndpointClass":
        n_b = {REGULAR: n, LIMIT_CIRCLE: n, LIMIT_POINT: 0}[kind]
        return cls(kind, n_b, diag)


def _regular_at_b(problem: Problem) -> bool:
    if not math.isfinite(problem.b):
        return False
    try:
        p = problem.p(problem.b)
    except ExprDomainError:
        return False
    return bool(np.all(np.isfinite(p)) and p[0] != 0.0)


def default_horizons(problem: Problem) -> list[float]:
    if math.isfinite(problem.b):
        return [problem.b * (1 - 10.0 ** -k) for k in (2, 4, 6)]
    return [4.0, 8.0, 16.0]


def classify_endpoint(problem: Problem, lambda_probe: complex = 1j,
                      horizon_schedule: list[float] | None = None,
                      tol: float = 1e-3, ode_tol: float = 1e-10) -> EndpointClass:
    """Decide whether b is regular, limit circle or limit point.

    The numeric test tracks the eigenvalues of the Gram matrix
    int_0^T Y*Y of a fundamental basis: a bounded eigenvalue means an L2
    direction.  Growth ratios between tol and 1/tol are inconclusive.
    """
    if problem.closed is not False and _regular_at_b(problem):
        return EndpointClass.of(REGULAR, problem.n)
    if problem.closed is True:
        raise ClassificationError("endpoint declared closed but the coefficients are singular at b")
    if problem.n != 1:
        raise ClassificationError("singular endpoints are supported for second order only")
    if lambda_probe.imag == 0:
        raise ClassificationError("probe lambda must be non-real")
    hs = sorted(horizon_schedule or default_horizons(problem))
    if len(hs) < 2:
        raise ClassificationError("need at least two horizons")
    Y = propagate_matrix(problem, lambda_probe, np.eye(2), hs[-1], ode_tol)
    eig = [np.linalg.eigvalsh(gram(Y, Y, 0.0, T)) for T in hs]
    ratio = eig[-1] / eig[-2]
    stable = ratio - 1.0 < tol
    diverged = ratio > 1.0 / tol
    diag = {"horizons": hs, "gram_eigenvalues": [e.tolist() for e in eig], "ratios": ratio.tolist()}
    if np.all(stable):
        return EndpointClass.of(LIMIT_CIRCLE, 1, **diag)
    if stable.sum() == 1 and diverged.sum() == 1:
        return EndpointClass.of(LIMIT_POINT, 1, **diag)
    raise ClassificationError(f"inconclusive classification, growth ratios {ratio.tolist()}")


@dataclass(frozen=True)
class BoundaryTriplet:
    problem: Problem
    endpoint: EndpointClass
    b_trunc: float
    B0: np.ndarray
    B1: np.ndarray
    anchor: float = 0.0
    ref: SolutionMatrix | None = field(default=None, repr=False)
    green_residual: float = 0.0
    tol: float = 1e-10

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def n_b(self) -> int:
        return self.endpoint.n_b

    @property
    def m(self) -> int:
        return self.n + self.n_b

    def gamma_prime(self, state_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(Gamma0' y, Gamma1' y) from the 2n x k state at b_trunc."""
        return self.B0 @ state_b, self.B1 @ state_b

    def gamma(self, state0: np.ndarray, state_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Full (Gamma0 y, Gamma1 y) for 2n x k states at 0 and at b_trunc."""
        n = self.n
        g0p, g1p = self.gamma_prime(state_b)
        return np.vstack([state0[n:], g0p]), np.vstack([-state0[:n], g1p])

    def gamma_of(self, sol: SolutionMatrix) -> tuple[np.ndarray, np.ndarray]:
        s_b = sol(self.b_trunc) if self.n_b else np.zeros((2 * self.n, sol.columns))
        return self.gamma(sol(0.0), s_b)


def green_identity_residual(triplet: BoundaryTriplet, samples: int = 10, seed: int = 12345) -> float:
    """Worst relative defect of [y,z](b) = (G1'y, G0'z) - (G0'y, G1'z) over random solutions."""
    if triplet.n_b == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    p = triplet.problem
    lams = rng.normal(size=2) + 1j * rng.normal(size=2)
    ends = propagate_endpoints(p, lams, np.eye(p.dim), 0.0, triplet.b_trunc, triplet.tol)
    worst = 0.0
    for _ in range(samples):
        y = ends[0] @ (rng.normal(size=p.dim) + 1j * rng.normal(size=p.dim))
        z = ends[1] @ (rng.normal(size=p.dim) + 1j * rng.normal(size=p.dim))
        lhs = bracket_matrix(y[:, None], z[:, None], p.n)[0, 0]
        g0y, g1y = triplet.gamma_prime(y)
        g0z, g1z = triplet.gamma_prime(z)
        t1 = np.vdot(g0z, g1y)
        t2 = np.vdot(g1z, g0y)
        scale = max(abs(lhs), abs(t1), abs(t2), 1e-300)
        worst = max(worst, abs(lhs - (t1 - t2)) / scale)
    return worst


def boundary_maps_at_b(problem: Problem, cls: EndpointClass, anchor: float = 0.0,
                       horizon: float | None = None, tol: float = 1e-10,
                       residual_tol: float = 1e-6) -> BoundaryTriplet:
    n = problem.n
    ref = None
    if cls.kind == REGULAR:
        b_trunc = problem.b
        B0 = np.hstack([np.zeros((n, n)), np.eye(n)])
        B1 = np.hstack([np.eye(n), np.zeros((n, n))])
    elif cls.kind == LIMIT_CIRCLE:
        if n != 1:
            raise TripletError("limit-circle maps implemented for second order only")
        b_trunc = horizon if horizon is not None else problem.b * (1 - 1e-6)
        if not b_trunc < problem.b:
            raise TripletError("truncation horizon must lie inside [0, b)")
        ref = propagate_matrix(problem, float(anchor), np.eye(2), b_trunc, tol)
        W = ref.states[-1].real
        # [y, w](b) = y1*w2 - y2*w1 for real w
        B0 = np.array([[W[1, 1], -W[0, 1]]])
        B1 = np.array([[W[1, 0], -W[0, 0]]])
    elif cls.kind == LIMIT_POINT:
        if n != 1:
            raise TripletError("limit-point endpoint implemented for second order only")
        b_trunc = horizon if horizon is not None else (40.0 if math.isinf(problem.b) else problem.b * (1 - 1e-6))
        B0 = np.zeros((0, 2 * n))
        B1 = np.zeros((0, 2 * n))
    else:
        raise TripletError(f"unknown endpoint kind {cls.kind!r}")
    trip = BoundaryTriplet(problem, cls, float(b_trunc), B0, B1, float(anchor), ref, 0.0, tol)
    res = green_identity_residual(trip)
    if res > residual_tol:
        raise TripletError(f"Green identity residual {res:.3e} exceeds {residual_tol:.1e}")
    return BoundaryTriplet(problem, cls, float(b_trunc), B0, B1, float(anchor), ref, res, tol)


def make_triplet(problem: Problem, anchor: float = 0.0, horizon: float | None = None,
                 tol: float = 1e-10, **classify_kw) -> BoundaryTriplet:
    """Classify b and build the matching triplet in one call."""
    cls = classify_endpoint(problem, **classify_kw)
    return boundary_maps_at_b(problem, cls, anchor, horizon, tol)


# -- Weyl solutions -----------------------------------------------------------

@dataclass(frozen=True)
class WeylSample:
    lam: complex
    M: np.ndarray
    Z: SolutionMatrix | None = field(default=None, repr=False)
    horizon: float | None = None
    horizon_change: float = 0.0
    cond: float = 1.0

    @property
    def n(self) -> int:
        return self.Z.n

    @property
    def m(self) -> np.ndarray:
        """Upper-left n x n block of M."""
        return self.M[: self.n, : self.n]


def _check_lambda(triplet: BoundaryTriplet, lam: complex) -> None:
    if lam.imag == 0 and triplet.endpoint.kind == LIMIT_POINT:
        raise WeylError("limit-point Weyl solutions need a non-real lambda")


def _decay_seed(problem: Problem, lam: complex, T: float) -> np.ndarray:
    """State of the frozen-coefficient decaying exponential exp(i k t) at T."""
    p = problem.p(T)
    k = np.sqrt(complex((lam - p[1]) / p[0]))
    if k.imag < 0 or (k.imag == 0 and k.real < 0):
        k = -k
    return np.array([[1.0], [p[0] * 1j * k]], dtype=complex)


def _decay_rate(problem: Problem, lam: complex, T: float) -> float:
    p = problem.p(T)
    return abs(np.sqrt(complex((lam - p[1]) / p[0])).imag)


def lp_start_horizon(problem: Problem, lam: complex, T: float) -> float:
    """Shrink the horizon by powers of two so the backward growth stays below e^GROWTH.

    The discarded growing component is then suppressed by about e^(-2 GROWTH)
    relative to the decaying one, far below double precision.
    """
    kappa = _decay_rate(problem, lam, T)
    j = 0
    while kappa * T / 2 ** j > LP_GROWTH and j < 60:
        j += 1
    return T / 2 ** j


LP_GROWTH = 25.0


def _shoot_lp(problem: Problem, lam: complex, T: float, tol: float) -> SolutionMatrix:
    sol = propagate_matrix(problem, lam, _decay_seed(problem, lam, T), 0.0, tol, t_start=T)
    s0 = sol(0.0)
    if s0[1, 0] == 0:
        raise WeylError("decaying solution has vanishing quasi-derivative at 0")
    return sol.combine(np.array([[1.0 / s0[1, 0]]]))


def weyl_solution_basis(problem: Problem, triplet: BoundaryTriplet, lam: complex,
                        tol: float | None = None, horizon_tol: float = 1e-8,
                        max_doublings: int = 4) -> WeylSample:
    """Weyl solutions Z with Gamma0 Z = I and the Weyl matrix M = Gamma1 Z."""
    lam = complex(lam)
    tol = tol or triplet.tol
    _check_lambda(triplet, lam)
    n = problem.n
    if triplet.endpoint.kind == LIMIT_POINT:
        T = lp_start_horizon(problem, lam, triplet.b_trunc)
        z1 = _shoot_lp(problem, lam, T, tol)
        for _ in range(max_doublings):
            if math.isfinite(problem.b) and 2 * T >= problem.b:
                break
            z2 = _shoot_lp(problem, lam, 2 * T, tol)
            m1, m2 = -z1(0.0)[0, 0], -z2(0.0)[0, 0]
            change = abs(m2 - m1)
            if change <= horizon_tol * (1 + abs(m2)):
                return WeylSample(lam, np.array([[m2]]), z2, 2 * T, change)
            T, z1 = 2 * T, z2
        raise WeylError(f"limit-point m(lambda) not horizon-stable up to T={T}")
    Yl = propagate_matrix(problem, lam, _left_init(n), triplet.b_trunc, tol)
    Yr = propagate_matrix(problem, lam, _right_init(triplet), 0.0, tol, t_start=triplet.b_trunc)
    Mat, (Pl, Pr), cond = _two_sided(triplet, Yl.states[-1][None], Yr.states[0][None])
    Z = JoinedSolution((Yr, Yl), np.block([[Pr[0], np.zeros((n, n))], [np.zeros((n, n)), Pl[0]]]))
    return WeylSample(lam, Mat[0], Z, triplet.b_trunc, 0.0, float(cond[0]))


def _left_init(n: int) -> np.ndarray:
    return np.vstack([np.eye(n), np.zeros((n, n))])


def _right_init(triplet: BoundaryTriplet) -> np.ndarray:
    return null_space(triplet.B0).astype(complex)


def _two_sided(triplet: BoundaryTriplet, Ylb: np.ndarray, Yr0: np.ndarray):
    """Weyl matrices from forward data at b and backward data at 0 (batched).

    Columns normalized at 0 come from the backward shot (they satisfy the
    b-part of Gamma0 y = 0 exactly); columns normalized at b come from the
    forward shot.  Each is then the dominant solution in its direction of
    propagation, so no cancellation occurs for large |Im lam|.
    """
    n = triplet.n
    G = triplet.B0 @ Ylb          # B0 Yl(b), (B, n, n)
    H = Yr0[:, n:, :]             # second block of Yr(0)
    cond = np.maximum(np.linalg.cond(G), np.linalg.cond(H))
    bad = ~np.isfinite(cond) | (cond > 1e12)
    if np.any(bad):
        raise WeylError(f"Weyl matching system singular (cond {np.max(cond):.2e})")
    Pl = np.linalg.inv(G)
    Pr = np.linalg.inv(H)
    Nb = _right_init(triplet)
    top = np.concatenate([-Yr0[:, :n, :] @ Pr, -Pl], axis=2)
    bottom = np.concatenate([(triplet.B1 @ Nb) @ Pr, triplet.B1 @ Ylb @ Pl], axis=2)
    return np.concatenate([top, bottom], axis=1), (Pl, Pr), cond


def weyl_matrix(problem: Problem, triplet: BoundaryTriplet, lam: complex,
                tol: float | None = None, **kw) -> WeylSample:
    """Weyl matrix M(lam) = Gamma1 Z (Gamma0 Z)^{-1} with the Weyl columns Z."""
    return weyl_solution_basis(problem, triplet, lam, tol, **kw)


def weyl_matrix_batch(problem: Problem, triplet: BoundaryTriplet, lams,
                      tol: float | None = None, horizon_tol: float = 1e-8,
                      max_doublings: int = 4) -> np.ndarray:
    """M(lam) for many lambdas at once, shape (B, m, m); no solution objects kept."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    tol = tol or triplet.tol
    n = problem.n
    if triplet.endpoint.kind == LIMIT_POINT:
        if np.any(lams.imag == 0):
            raise WeylError("limit-point Weyl solutions need a non-real lambda")

        def shoot(ls, T):
            seeds = np.stack([_decay_seed(problem, lam, T) for lam in ls])
            s0 = propagate_endpoints(problem, ls, seeds, T, 0.0, tol)
            return -s0[:, 0, 0] / s0[:, 1, 0]

        out = np.empty(len(lams), dtype=complex)
        starts = np.array([lp_start_horizon(problem, lam, triplet.b_trunc) for lam in lams])
        for T0 in np.unique(starts):
            idx = np.flatnonzero(starts == T0)
            todo, T = idx, T0
            m1 = shoot(lams[todo], T)
            for _ in range(max_doublings):
                m2 = shoot(lams[todo], 2 * T)
                ok = np.abs(m2 - m1) <= horizon_tol * (1 + np.abs(m2))
                out[todo[ok]] = m2[ok]
                todo, m1, T = todo[~ok], m2[~ok], 2 * T
                if len(todo) == 0:
                    break
            if len(todo):
                raise WeylError(f"limit-point m(lambda) not horizon-stable up to T={T}")
        return out[:, None, None]
    Ylb = propagate_endpoints(problem, lams, _left_init(n), 0.0, triplet.b_trunc, tol)
    Yr0 = propagate_endpoints(problem, lams, _right_init(triplet), triplet.b_trunc, 0.0, tol)
    return _two_sided(triplet, Ylb, Yr0)[0]


def weyl_factors_batch(problem: Problem, triplet: BoundaryTriplet, lams,
                       tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(Gamma0 Y, Gamma1 Y) for a solution basis Y, so that M = (Gamma1 Y)(Gamma0 Y)^{-1}.

    Nothing is inverted, which keeps M's poles out of anything built on top
    (both factors stay bounded where M blows up).  Columns are scaled to
    unit norm.  Limit-point problems return A = 1 and B = m.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    if triplet.endpoint.kind == LIMIT_POINT:
        M = weyl_matrix_batch(problem, triplet, lams, tol)
        return np.ones_like(M), M
    tol = tol or triplet.tol
    n = problem.n
    Ylb = propagate_endpoints(problem, lams, _left_init(n), 0.0, triplet.b_trunc, tol)
    Yr0 = propagate_endpoints(problem, lams, _right_init(triplet), triplet.b_trunc, 0.0, tol)
    B_ = len(lams)
    Nb = _right_init(triplet)
    z = np.zeros((B_, n, n), dtype=complex)
    A = np.concatenate([np.concatenate([Yr0[:, n:, :], z], axis=2),
                        np.concatenate([z, triplet.B0 @ Ylb], axis=2)], axis=1)
    top = np.concatenate([-Yr0[:, :n, :], np.broadcast_to(-np.eye(n), (B_, n, n))], axis=2)
    bottom = np.concatenate([np.broadcast_to(triplet.B1 @ Nb, (B_, n, n)), triplet.B1 @ Ylb], axis=2)
    B = np.concatenate([top, bottom], axis=1)
    scale = np.sqrt(np.sum(np.abs(A) ** 2 + np.abs(B) ** 2, axis=1, keepdims=True))
    return A / scale, B / scale


__all__ = [
    "REGULAR", "LIMIT_CIRCLE", "LIMIT_POINT", "EndpointClass", "BoundaryTriplet", "WeylSample",
    "ClassificationError", "TripletError", "WeylError", "PropagationError",
    "classify_endpoint", "boundary_maps_at_b", "make_triplet", "green_identity_residual",
    "weyl_solution_basis", "weyl_matrix", "weyl_matrix_batch", "weyl_factors_batch", "default_horizons", "lp_start_horizon",
]
