"""Characteristic matrix Omega_tau(lam) and the m-function m_P(lam).

Two independent routes produce m_P:

* extraction: Omega_tau -> (W')^{-1} Omega_tau (W')^{-1*}, upper-left block;
* Krein form: N_hat* Omega_0 N_hat + N_hat* S_+(lam) R(lam) (N_hat* S_-(conj lam))*,
  built from fresh Weyl data at lam and at conj(lam).

Throughout R(lam) = (C0 - C1 M)^{-1} C1, which equals -(tau + M)^{-1} without
ever inverting a linear relation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .boundary import BoundaryTriplet, WeylSample, weyl_factors_batch, weyl_matrix
from .nev_pairs import BoundaryPair, PairGeometry, im_part
from .ode_engine import Problem

STRUCT_TOL = 1e-8
COND_LIMIT = 1e12
STRUCT_GRID = (1 + 2j, -1 + 2j, 1 - 2j, -1 - 2j, 2 + 1j, -2 + 1j, 2 - 1j, -2 - 1j)


class StructureError(RuntimeError):
    """Block structure of the transformed characteristic matrix is violated."""


class SingularPairError(RuntimeError):
    """C0 - C1 M is numerically singular at this lambda."""


@dataclass(frozen=True)
class CharSample:
    lam: complex
    M: np.ndarray
    Omega: np.ndarray
    R: np.ndarray
    OmegaW: np.ndarray | None = None
    mP: np.ndarray | None = None
    cond: float = 1.0


def _resolvent_factors(C0: np.ndarray, C1: np.ndarray, M: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    K = C0 - C1 @ M
    cond = float(np.linalg.cond(K))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularPairError(f"C0 - C1 M singular (cond {cond:.2e})")
    RQ = np.linalg.solve(K, np.hstack([C1, C0]))
    m = M.shape[0]
    return RQ[:, :m], RQ[:, m:], cond


def omega_from_weyl(M: np.ndarray, C0: np.ndarray, C1: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Compressed 2n x 2n characteristic matrix from one Weyl value."""
    R, Q, cond = _resolvent_factors(C0, C1, M)
    half = 0.5 * np.eye(M.shape[0])
    w1 = M + M @ R @ M
    w2 = -half - M @ R
    # ( tau + M )^{-1} M = I - (C0 - C1 M)^{-1} C0
    w3 = half - Q
    w4 = R
    Om = np.block([[w1[:n, :n], w2[:n, :n]], [w3[:n, :n], w4[:n, :n]]])
    return Om, R, cond


def omega_from_factors(A: np.ndarray, B: np.ndarray, C0: np.ndarray, C1: np.ndarray,
                       n: int) -> tuple[np.ndarray, float]:
    """Same matrix from M = B A^{-1} without forming M.

    With S = (C0 A - C1 B)^{-1}: M + MRM = B S C0, MR = B S C1, R = A S C1
    and (C0 - C1 M)^{-1} C0 = A S C0.
    """
    K = C0 @ A - C1 @ B
    cond = float(np.linalg.cond(K))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularPairError(f"C0 A - C1 B singular (cond {cond:.2e})")
    S = np.linalg.solve(K, np.hstack([C0, C1]))
    m = A.shape[0]
    S0, S1 = S[:, :m], S[:, m:]
    half = 0.5 * np.eye(m)
    w1 = B @ S0
    w2 = -half - B @ S1
    w3 = half - A @ S0
    w4 = A @ S1
    Om = np.block([[w1[:n, :n], w2[:n, :n]], [w3[:n, :n], w4[:n, :n]]])
    return Om, cond


def char_matrix(problem: Problem, triplet: BoundaryTriplet, pair: BoundaryPair, lam: complex,
                tol: float | None = None, weyl: WeylSample | None = None) -> CharSample:
    """Omega_tau(lam); below the real axis it is taken as Omega_tau(conj lam)*."""
    lam = complex(lam)
    if lam.imag < 0:
        up = char_matrix(problem, triplet, pair, lam.conjugate(), tol)
        return CharSample(lam, up.M.conj().T, up.Omega.conj().T, _lower_R(pair, up.M.conj().T, lam),
                          cond=up.cond)
    w = weyl or weyl_matrix(problem, triplet, lam, tol)
    C0, C1 = pair(lam)
    Om, R, cond = omega_from_weyl(w.M, C0, C1, problem.n)
    return CharSample(lam, w.M, Om, R, cond=cond)


def _lower_R(pair: BoundaryPair, M: np.ndarray, lam: complex) -> np.ndarray:
    C0, C1 = pair(lam)
    return _resolvent_factors(C0, C1, M)[0]


def transform_w(Omega: np.ndarray, geom: PairGeometry) -> np.ndarray:
    return geom.W_inv @ Omega @ geom.W_inv.conj().T


def structure_defect(OmegaW: np.ndarray, geom: PairGeometry) -> dict[str, float]:
    """Deviations from [[m_P, -J2*/2], [-J2/2, 0]]."""
    k = geom.k_hat
    J2 = geom.J2
    out = {"zero_block": 0.0, "upper_right": 0.0, "lower_left": 0.0}
    if OmegaW.shape[0] > k:
        out["zero_block"] = float(np.linalg.norm(OmegaW[k:, k:], 2))
        out["upper_right"] = float(np.abs(OmegaW[:k, k:] + 0.5 * J2.conj().T).max())
        out["lower_left"] = float(np.abs(OmegaW[k:, :k] + 0.5 * J2).max())
    return out


def m_function(sample: CharSample, geom: PairGeometry, check: bool = True) -> np.ndarray:
    """Upper-left k_hat block of the W'-transformed characteristic matrix."""
    OW = transform_w(sample.Omega, geom)
    if check:
        d = structure_defect(OW, geom)
        scale = max(1.0, float(np.abs(OW[: geom.k_hat, : geom.k_hat]).max()))
        if d["zero_block"] > STRUCT_TOL * scale or max(d["upper_right"], d["lower_left"]) > STRUCT_TOL * scale:
            raise StructureError(f"block structure violated at lambda={sample.lam}: {d}")
    k = geom.k_hat
    return OW[:k, :k]


def characterize(problem: Problem, triplet: BoundaryTriplet, pair: BoundaryPair, geom: PairGeometry,
                 lam: complex, tol: float | None = None, check: bool = True) -> CharSample:
    """char_matrix plus the W' transform and m_P in one sample."""
    s = char_matrix(problem, triplet, pair, lam, tol)
    mP = m_function(s, geom, check)
    return replace(s, OmegaW=transform_w(s.Omega, geom), mP=mP)


def _s_matrix(M: np.ndarray, n: int) -> np.ndarray:
    """S(z) = [[-m(z), -M2(z)], [I, 0]] as a 2n x m matrix."""
    m = M.shape[0]
    E = np.zeros((n, m))
    E[:, :n] = np.eye(n)
    return np.vstack([-M[:n, :], E])


def m_function_krein(problem: Problem, triplet: BoundaryTriplet, pair: BoundaryPair,
                     geom: PairGeometry, lam: complex, tol: float | None = None) -> np.ndarray:
    """m_P from the Krein-type formula with Weyl data at lam and at conj(lam)."""
    lam = complex(lam)
    n = problem.n
    Mp = weyl_matrix(problem, triplet, lam, tol).M
    Mm = weyl_matrix(problem, triplet, lam.conjugate(), tol).M
    Nh = geom.N_hat
    m = Mp[:n, :n]
    Om0 = np.block([[m, -0.5 * np.eye(n)], [-0.5 * np.eye(n), np.zeros((n, n))]])
    T0 = Nh.conj().T @ Om0 @ Nh
    Tp = Nh.conj().T @ _s_matrix(Mp, n)
    Tm = Nh.conj().T @ _s_matrix(Mm, n)
    C0, C1 = pair(lam)
    R = _resolvent_factors(C0, C1, Mp)[0]
    return T0 + Tp @ R @ Tm.conj().T


def m_function_batch(problem: Problem, triplet: BoundaryTriplet, pair: BoundaryPair,
                     geom: PairGeometry, lams, tol: float | None = None) -> np.ndarray:
    """m_P at many upper half-plane points, shape (B, k_hat, k_hat); no structure checks."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    if np.any(lams.imag < 0):
        raise ValueError("batch evaluation expects Im lambda >= 0")
    As, Bs = weyl_factors_batch(problem, triplet, lams, tol)
    n, k = problem.n, geom.k_hat
    out = np.empty((len(lams), k, k), dtype=complex)
    Wi = geom.W_inv
    for i, (lam, A, B) in enumerate(zip(lams, As, Bs)):
        C0, C1 = pair(lam)
        Om = omega_from_factors(A, B, C0, C1, n)[0]
        out[i] = (Wi @ Om @ Wi.conj().T)[:k, :k]
    return out


# -- diagnostics -------------------------------------------------------------

def krein_offset(problem, triplet, pair, geom, grid: Sequence[complex] = STRUCT_GRID, tol=None) -> dict:
    """N_hat* Omega N_hat - m_P over a grid: should be one Hermitian constant."""
    diffs = []
    for lam in grid:
        s = characterize(problem, triplet, pair, geom, lam, tol)
        diffs.append(geom.N_hat.conj().T @ s.Omega @ geom.N_hat - s.mP)
    diffs = np.array(diffs)
    mean = diffs.mean(axis=0)
    return {"spread": float(np.abs(diffs - mean).max()),
            "hermitian_defect": float(np.abs(mean - mean.conj().T).max()),
            "constant": mean}


def herglotz_battery(problem, triplet, pair, geom, grid: Sequence[complex] = STRUCT_GRID, tol=None) -> dict:
    """Symmetry m(conj l) = m(l)* and Im m / Im l >= 0 for both routes, plus route agreement."""
    worst_sym, worst_im, worst_route = 0.0, np.inf, 0.0
    for lam in grid:
        if lam.imag < 0:
            continue
        a = characterize(problem, triplet, pair, geom, lam, tol).mP
        b = characterize(problem, triplet, pair, geom, lam.conjugate(), tol).mP
        worst_sym = max(worst_sym, float(np.abs(b - a.conj().T).max()))
        for m, z in ((a, lam), (b, lam.conjugate())):
            worst_im = min(worst_im, float(np.linalg.eigvalsh(im_part(m) / z.imag).min()))
        for z, m in ((lam, a), (lam.conjugate(), b)):
            kr = m_function_krein(problem, triplet, pair, geom, z, tol)
            worst_route = max(worst_route, float(np.abs(kr - m).max() / (1 + np.abs(m).max())))
    return {"symmetry": worst_sym, "min_im_ratio": worst_im, "route_gap": worst_route}


def strictness_and_growth(problem, triplet, pair, geom, lambda_grid: Iterable[complex] = STRUCT_GRID,
                          ys: Sequence[float] = (1e2, 1e3, 1e4), tol=None) -> dict:
    """Rank of Im Omega(i), decay of ||Omega(iy)||/y, and the smallest eigenvalue of Im m_P."""
    s = char_matrix(problem, triplet, pair, 1j, tol)
    ImO = im_part(s.Omega)
    scale = max(1.0, float(np.linalg.norm(s.Omega, 2)))
    rank = int(np.linalg.matrix_rank(ImO, tol=1e-8 * scale))
    growth = [float(np.linalg.norm(char_matrix(problem, triplet, pair, 1j * y, tol).Omega, 2) / y) for y in ys]
    min_im = np.inf
    for lam in lambda_grid:
        if lam.imag > 0:
            mP = characterize(problem, triplet, pair, geom, lam, tol).mP
            min_im = min(min_im, float(np.linalg.eigvalsh(im_part(mP)).min()))
    return {
        "rank_im_omega": rank,
        "uniformly_strict": rank == 2 * problem.n,
        "k_hat": geom.k_hat,
        "growth": growth,
        "growth_decreasing": all(b < a for a, b in zip(growth, growth[1:])),
        "min_im_mP": min_im,
    }


__all__ = [
    "CharSample", "StructureError", "SingularPairError", "STRUCT_GRID", "STRUCT_TOL",
    "char_matrix", "omega_from_weyl", "omega_from_factors", "transform_w", "structure_defect", "m_function", "characterize",
    "m_function_krein", "m_function_batch", "krein_offset", "herglotz_battery", "strictness_and_growth",
]
