"""Spectral functions from m_P by Stieltjes inversion, and the eigenfunction transform.

The smoothed measure (1/pi) Im m_P(s + i eps) ds is sampled at Gauss-Legendre
nodes on a uniform cell grid for each eps in a decreasing schedule.

* Atoms: local maxima of tr Im m_P at the largest eps are refined by a
  bounded 1-d maximization at every eps.  A candidate is atomic when
  eps * Im m_P at the peak stays put as eps shrinks (a density would make
  it shrink like eps).  The weight is the polynomial extrapolation to eps = 0.
* Density: pointwise Richardson on the two smallest eps (error O(eps)),
  with a window around each atom replaced by linear interpolation.

Sigma uses the left-closed convention Sigma(s) = mu([0, s)) for s > 0, so an
atom at s_j contributes to Sigma(s) only for s > s_j, and Sigma(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .ode_engine import gauss_nodes, gram

MONOTONE_TOL = 1e-8
DEFAULT_EPS = (1e-2, 5e-3, 2.5e-3)


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True)
class Atom:
    s: float
    weight: np.ndarray
    stability: float = 1.0


@dataclass(frozen=True)
class SpectralFunction:
    dim: int
    grid: np.ndarray
    values: np.ndarray = field(repr=False)
    atoms: tuple[Atom, ...] = ()
    density: np.ndarray | None = field(repr=False, default=None)
    nodes: np.ndarray | None = field(repr=False, default=None)
    node_weights: np.ndarray | None = field(repr=False, default=None)
    rho: np.ndarray | None = field(repr=False, default=None)
    meta: dict = field(default_factory=dict, compare=False)

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def min_increment_eig(self) -> float:
        inc = self.increments()
        if len(inc) == 0:
            return 0.0
        return float(min(np.linalg.eigvalsh((d + d.conj().T) / 2).min() for d in inc))

    def max_increment_rank(self, tol: float = MONOTONE_TOL) -> int:
        return int(max((np.linalg.matrix_rank((d + d.conj().T) / 2, tol=tol, hermitian=True)
                        for d in self.increments()), default=0))

    def at(self, s: float) -> np.ndarray:
        """Sigma(s) for s on the grid (nearest grid point)."""
        j = int(np.argmin(np.abs(self.grid - s)))
        return self.values[j]


def _herm_im(m: np.ndarray) -> np.ndarray:
    return (m - np.conj(np.swapaxes(m, -1, -2))) / 2j


def _neville_zero(xs: Sequence[float], ys: Sequence[np.ndarray]) -> np.ndarray:
    """Value at x = 0 of the interpolating polynomial through (xs, ys)."""
    p = [np.asarray(y, dtype=complex) for y in ys]
    x = list(xs)
    n = len(x)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (x[i + k] * p[i] - x[i] * p[i + 1]) / (x[i + k] - x[i])
    return p[0]


def _refine_peaks(mP: Callable, centers: np.ndarray, halves: np.ndarray, eps: float,
                  rounds: int = 7, width: int = 9) -> np.ndarray:
    """Batched zoom search for the maxima of tr Im m_P(. + i eps) near each center.

    Every round samples ``width`` points per candidate in one m_P call and
    shrinks the window around the best sample by (width - 1)/2; a parabola
    through the last three samples gives the final location.
    """
    c = np.asarray(centers, dtype=float).copy()
    hw = np.asarray(halves, dtype=float).copy()
    u = np.linspace(-1.0, 1.0, width)
    for r in range(rounds):
        pts = c[:, None] + hw[:, None] * u[None, :]
        vals = np.trace(_herm_im(mP((pts + 1j * eps).ravel())), axis1=1, axis2=2).real.reshape(pts.shape)
        j = np.clip(np.argmax(vals, axis=1), 1, width - 2)
        rows = np.arange(len(c))
        y0, y1, y2 = vals[rows, j - 1], vals[rows, j], vals[rows, j + 1]
        step = hw * (u[1] - u[0])
        den = y0 - 2 * y1 + y2
        shift = np.where(den < 0, 0.5 * (y0 - y2) / np.where(den < 0, den, -1.0), 0.0)
        best = pts[rows, j]
        if r == rounds - 1:
            return best + np.clip(shift, -1.0, 1.0) * step
        c, hw = best, step
    return c  # rounds == 0


def invert_stieltjes(mP: Callable, interval: tuple[float, float], eps_seq: Sequence[float] = DEFAULT_EPS,
                     delta: float = 0.0, grid_step: float | None = None, q: int = 4,
                     atom_ratio: float = 0.75, atom_threshold: float = 1e-3) -> SpectralFunction:
    """Spectral function on [a, c) from a batched m_P evaluator.

    ``mP`` maps an array of lambdas (upper half-plane) to (B, k, k).
    ``delta`` shifts the reported points: the value at grid point s_j is
    mu([0, s_j - delta)).  ``grid_step`` defaults to (c - a)/1000.
    """
    a, c = map(float, interval)
    eps = sorted(map(float, eps_seq), reverse=True)
    if len(eps) < 2 or eps[-1] <= 0:
        raise ValueError("need at least two positive eps levels")
    if not c > a:
        raise ValueError("empty interval")
    h = grid_step or (c - a) / 1000
    if h <= 0:
        raise ValueError("grid_step must be positive")
    cells = max(1, int(round((c - a) / h)))
    edges = np.linspace(a, c, cells + 1)
    nodes, weights = gauss_nodes(edges, q)
    samples = [_herm_im(mP(nodes + 1j * e)) / np.pi for e in eps]  # (N, k, k) each
    k = samples[0].shape[-1]

    # atom candidates from the widest smoothing
    tr = np.trace(samples[0], axis1=1, axis2=2).real
    cand = [i for i in range(1, len(nodes) - 1) if tr[i] > tr[i - 1] and tr[i] >= tr[i + 1]]
    atoms: list[Atom] = []
    spacing = np.diff(nodes)
    if cand:
        cand = np.array(cand)
        scale = np.array([max(1.0, abs(float(np.median(np.pi * tr[max(0, i - 20):i + 21]) * eps[0])))
                          for i in cand])
        # a first-level weight below threshold cannot grow into an atom
        keep = eps[0] * np.pi * tr[cand] > atom_threshold * scale
        cand, scale = cand[keep], scale[keep]
    if len(cand):
        halves = np.maximum(spacing[cand - 1], spacing[cand])
        locs = np.array([_refine_peaks(mP, nodes[cand], halves, e) for e in eps])  # (L, C)
        peak = [e * _herm_im(mP(locs[i] + 1j * e)) for i, e in enumerate(eps)]  # (L)(C, k, k)
        for j in range(len(cand)):
            vals = [peak[i][j] for i in range(len(eps))]
            w_first = float(np.trace(vals[0]).real)
            w_last = float(np.trace(vals[-1]).real)
            if w_first <= 0 or w_last / w_first < atom_ratio or w_last < atom_threshold * scale[j]:
                continue
            W = _neville_zero(eps, vals)
            W = (W + W.conj().T) / 2
            s_at = float(_neville_zero(eps, locs[:, j]).real)
            if not a <= s_at < c:
                continue
            if atoms and abs(atoms[-1].s - s_at) < 1e-6 * max(1.0, abs(s_at)):
                continue
            atoms.append(Atom(s_at, W, w_last / w_first))

    # density: strip the exact Lorentzian of every atom, then Richardson on
    # the two finest levels (removes the O(eps) error of what is left)
    e2, e3 = eps[-2], eps[-1]
    smooth = [samples[-2].copy(), samples[-1].copy()]
    for at in atoms:
        d2 = (nodes - at.s) ** 2
        for sm, e in zip(smooth, (e2, e3)):
            sm -= (e / (np.pi * (d2 + e * e)))[:, None, None] * at.weight
    rho = (e2 * smooth[1] - e3 * smooth[0]) / (e2 - e3)
    radius = max(2 * h, 20 * eps[0])
    for at in atoms:
        inside = np.abs(nodes - at.s) < radius
        if not inside.any():
            continue
        left = nodes < at.s - radius
        right = nodes > at.s + radius
        rl = rho[left][-1] if left.any() else None
        rr = rho[right][0] if right.any() else None
        sl = nodes[left][-1] if left.any() else at.s - radius
        sr = nodes[right][0] if right.any() else at.s + radius
        rl = rr if rl is None else rl
        rr = rl if rr is None else rr
        if rl is None:
            rho[inside] = 0.0
            continue
        tt = ((nodes[inside] - sl) / (sr - sl))[:, None, None]
        rho[inside] = (1 - tt) * rl + tt * rr
    rho = (rho + np.conj(np.swapaxes(rho, 1, 2))) / 2

    cell_int = (weights[:, None, None] * rho).reshape(cells, q, k, k).sum(axis=1)
    density = cell_int / np.diff(edges)[:, None, None]

    # Sigma at the edges, left-closed, normalized at 0
    cum = np.concatenate([np.zeros((1, k, k), dtype=complex), np.cumsum(cell_int, axis=0)])
    grid = edges - delta
    ac_at = lambda s: _interp_cum(edges, cum, s)  # noqa: E731
    ac0 = ac_at(0.0) if a <= 0.0 <= c else np.zeros((k, k), dtype=complex)
    values = np.empty((len(edges), k, k), dtype=complex)
    for j, s in enumerate(grid):
        v = ac_at(s) - ac0
        for at in atoms:
            if 0.0 <= at.s < s:
                v = v + at.weight
            elif s <= at.s < 0.0:
                v = v - at.weight
        values[j] = v
    sigma = SpectralFunction(k, edges, values, tuple(atoms), density, nodes, weights, rho,
                             {"eps": eps, "grid_step": h, "q": q, "delta": delta,
                              "window_radius": radius, "interval": (a, c)})
    worst = sigma.min_increment_eig()
    if worst < -MONOTONE_TOL * max(1.0, float(np.abs(values).max())):
        raise SpectralError(f"non-monotone spectral function (min increment eigenvalue {worst:.3e}); "
                            "try a finer eps schedule")
    return sigma


def _interp_cum(edges: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    """Cumulative density integral at s, linear inside a cell (avoids re-sampling)."""
    if s <= edges[0]:
        return cum[0]
    if s >= edges[-1]:
        return cum[-1]
    j = int(np.searchsorted(edges, s, side="right")) - 1
    t = (s - edges[j]) / (edges[j + 1] - edges[j])
    return (1 - t) * cum[j] + t * cum[j + 1]


# -- eigenfunction transform ---------------------------------------------

@dataclass(frozen=True)
class TransformCoefficients:
    s: np.ndarray
    values: np.ndarray
    atom_s: np.ndarray
    atom_values: np.ndarray
    support: float


def ac_nodes(sigma: SpectralFunction, floor: float = 1e-8) -> np.ndarray:
    """Indices of the density nodes kept by the transforms.

    The lightest nodes are dropped as long as their combined mass stays
    below ``floor`` times the total mass (atoms included), so the discarded
    part of every spectral integral is bounded by that fraction.
    """
    if sigma.rho is None or len(sigma.rho) == 0:
        return np.zeros(0, dtype=int)
    mass = np.abs(sigma.rho).reshape(len(sigma.rho), -1).max(axis=1) * sigma.node_weights
    total = mass.sum() + sum(float(np.abs(at.weight).max()) for at in sigma.atoms)
    if total == 0:
        return np.zeros(0, dtype=int)
    order = np.argsort(mass, kind="stable")
    dropped = np.cumsum(mass[order]) <= floor * total
    return np.sort(order[~dropped])


class _FnSol:
    """A sampled scalar function wrapped so that gram() can integrate it."""

    def __init__(self, f: Callable, grid: np.ndarray):
        self.f, self.grid = f, grid
        self.columns = 1

    def y(self, t):
        return (np.asarray(self.f(t), dtype=complex) * np.ones_like(t))[:, None]


def fourier_forward(f: Callable, phi_family: Callable, sigma: SpectralFunction, support: float,
                    b: float = np.inf, floor: float = 1e-8, q: int = 8) -> TransformCoefficients:
    """g_f(s) = int_0^support phi_N(t, s)* f(t) dt at the atoms and kept density nodes.

    ``phi_family(s, t_end)`` returns phi_N(., s) propagated to t_end.  On a
    regular interval the support may reach b itself.
    """
    if not 0 < support <= b:
        raise ValueError("f must be supported in [0, beta] with beta inside the interval")
    keep = ac_nodes(sigma, floor)
    s_ac = sigma.nodes[keep] if len(keep) else np.zeros(0)

    def coeff(s):
        sol = phi_family(float(s), support)
        return gram(sol, _FnSol(f, sol.grid), 0.0, support, q)[:, 0]

    atom_s = np.array([at.s for at in sigma.atoms])
    atom_vals = np.array([coeff(s) for s in atom_s]).reshape(len(atom_s), sigma.dim)
    vals = np.array([coeff(s) for s in s_ac]).reshape(len(s_ac), sigma.dim)
    return TransformCoefficients(s_ac, vals, atom_s, atom_vals, float(support))


def fourier_inverse(g: TransformCoefficients, sigma: SpectralFunction, phi_family: Callable,
                    t_grid: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """f(t) = sum over atoms phi_N(t,s) W g(s) + int phi_N(t,s) rho(s) g(s) ds."""
    t_grid = np.asarray(t_grid, dtype=float)
    t_end = float(t_grid.max())
    out = np.zeros(len(t_grid), dtype=complex)
    for at, gv in zip(sigma.atoms, g.atom_values):
        out += phi_family(at.s, t_end).y(t_grid) @ (at.weight @ gv)
    keep = ac_nodes(sigma, floor)
    if len(keep) != len(g.s):
        raise ValueError("transform and spectral function disagree on the density nodes")
    for j, gv in zip(keep, g.values):
        out += sigma.node_weights[j] * (phi_family(float(sigma.nodes[j]), t_end).y(t_grid) @ (sigma.rho[j] @ gv))
    return out


def spectral_energy(g: TransformCoefficients, sigma: SpectralFunction, floor: float = 1e-8,
                    window: tuple[float, float] | None = None) -> float:
    """int (dSigma g, g), optionally restricted to [alpha, beta)."""
    inside = (lambda s: True) if window is None else (lambda s: window[0] <= s < window[1])  # noqa: E731
    tot = 0.0
    for at, gv in zip(sigma.atoms, g.atom_values):
        if inside(at.s):
            tot += float(np.vdot(gv, at.weight @ gv).real)
    keep = ac_nodes(sigma, floor)
    for j, gv in zip(keep, g.values):
        if inside(sigma.nodes[j]):
            tot += float(sigma.node_weights[j] * np.vdot(gv, sigma.rho[j] @ gv).real)
    return tot


def parseval_residual(f_norm2: float, g: TransformCoefficients, sigma: SpectralFunction,
                      floor: float = 1e-8) -> float:
    """|‖f‖² - int (dSigma g, g)| / ‖f‖² (0 for f = 0 by definition)."""
    if f_norm2 == 0:
        return 0.0
    return abs(f_norm2 - spectral_energy(g, sigma, floor)) / f_norm2


def minimal_family(sigma: SpectralFunction, X: np.ndarray) -> SpectralFunction:
    """Congruence Sigma -> X* Sigma X on every field; the matching solution is phi_N X^{-*}."""
    X = np.atleast_2d(np.asarray(X, dtype=complex))
    if X.shape != (sigma.dim, sigma.dim):
        raise ValueError(f"X must be {sigma.dim} x {sigma.dim}")
    cond = np.linalg.cond(X)
    if not np.isfinite(cond) or cond > 1e8:
        raise ValueError(f"X near singular (cond {cond:.2e})")
    Xh = X.conj().T
    cong = lambda A: None if A is None else Xh @ A @ X  # noqa: E731
    atoms = tuple(Atom(at.s, Xh @ at.weight @ X, at.stability) for at in sigma.atoms)
    meta = dict(sigma.meta)
    meta["solution_transform"] = "phi_N X^{-*}"
    meta["X"] = X.tolist()
    return replace(sigma, values=cong(sigma.values), atoms=atoms, density=cong(sigma.density),
                   rho=cong(sigma.rho), meta=meta)


__all__ = [
    "Atom", "SpectralFunction", "TransformCoefficients", "SpectralError", "DEFAULT_EPS", "MONOTONE_TOL",
    "invert_stieltjes", "fourier_forward", "fourier_inverse", "parseval_residual", "spectral_energy",
    "minimal_family", "ac_nodes",
]
