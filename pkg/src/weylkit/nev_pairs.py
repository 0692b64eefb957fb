"""lambda-dependent boundary pairs with a constant block at the left end.

A pair (C0(lam), C1(lam)) imposes C0 Gamma0 y - C1 Gamma1 y = 0 and has the
triangular shape

    C0 = [[N0, C01(lam)],      C1 = [[N1, C11(lam)],
          [ 0, C02(lam)]]            [ 0, C12(lam)]]

with constant k_hat x n blocks N0, N1.  Entries of the C' blocks are
rational functions of lam stored as coefficient lists (ascending powers).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import subspace_angles

PSD_TOL = 1e-10


class PairError(ValueError):
    pass


@dataclass(frozen=True)
class Rational:
    """num(lam)/den(lam) with coefficients in ascending powers."""

    num: tuple[complex, ...]
    den: tuple[complex, ...] = (1.0,)

    def __post_init__(self):
        if not self.num:
            object.__setattr__(self, "num", (0.0,))
        if not self.den or all(c == 0 for c in self.den):
            raise PairError("zero denominator polynomial")

    @classmethod
    def const(cls, value: complex) -> "Rational":
        return cls((complex(value),))

    @classmethod
    def parse(cls, text: str) -> "Rational":
        """Parse ``poly`` or ``poly/poly``; a poly is ``[c0, c1, ...]``, a number, or ``lam``."""
        parts = _split_top(text.strip(), "/")
        if len(parts) > 2:
            raise PairError(f"malformed rational entry {text!r}")
        num = _parse_poly(parts[0])
        den = _parse_poly(parts[1]) if len(parts) == 2 else (1.0,)
        return cls(num, den)

    def __call__(self, lam: complex) -> complex:
        return complex(np.polyval(self.num[::-1], lam) / np.polyval(self.den[::-1], lam))

    @property
    def is_constant(self) -> bool:
        return all(c == 0 for c in self.num[1:]) and all(c == 0 for c in self.den[1:])

    def __str__(self) -> str:
        fmt = lambda cs: "[" + ", ".join(_fmt_c(c) for c in cs) + "]"  # noqa: E731
        return fmt(self.num) if self.den == (1.0,) else f"{fmt(self.num)}/{fmt(self.den)}"


def _fmt_c(c: complex) -> str:
    c = complex(c)
    return repr(c.real) if c.imag == 0 else repr(c)


def _split_top(text: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == sep and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [s.strip() for s in out]


_LAM = re.compile(r"^([+-]?)\s*(lam|l|λ)$")


def _parse_poly(text: str) -> tuple[complex, ...]:
    text = text.strip()
    m = _LAM.match(text)
    if m:
        return (0.0, -1.0 if m.group(1) == "-" else 1.0)
    if text.startswith("[") and text.endswith("]"):
        items = [s for s in _split_top(text[1:-1], ",") if s]
        if not items:
            raise PairError("empty coefficient list")
        return tuple(_parse_number(s) for s in items)
    return (_parse_number(text),)


def _parse_number(s: str) -> complex:
    try:
        c = complex(s.replace(" ", "").replace("i", "j"))
    except ValueError as exc:
        raise PairError(f"bad coefficient {s!r}") from exc
    return c.real if c.imag == 0 else c


def _block(rows, shape: tuple[int, int], name: str) -> tuple[tuple[Rational, ...], ...]:
    if rows is None:
        rows = [[0] * shape[1] for _ in range(shape[0])]
    out = tuple(tuple(e if isinstance(e, Rational) else Rational.parse(str(e)) if isinstance(e, str)
                      else Rational.const(e) for e in row) for row in rows)
    if shape[0] == 0 or shape[1] == 0:
        if any(len(r) for r in out) or (len(out) not in (0, shape[0])):
            raise PairError(f"block {name} must be empty for shape {shape}")
        return tuple(() for _ in range(shape[0]))
    if len(out) != shape[0] or any(len(r) != shape[1] for r in out):
        raise PairError(f"block {name} must have shape {shape}")
    return out


def _eval_block(block, lam: complex, cols: int) -> np.ndarray:
    if not block:
        return np.zeros((0, cols), dtype=complex)
    return np.array([[e(lam) for e in row] for row in block], dtype=complex).reshape(len(block), cols)


@dataclass(frozen=True)
class BoundaryPair:
    n: int
    n_b: int
    N0: np.ndarray = field(repr=False)
    N1: np.ndarray = field(repr=False)
    C01: tuple = field(repr=False, default=())
    C11: tuple = field(repr=False, default=())
    C02: tuple = field(repr=False, default=())
    C12: tuple = field(repr=False, default=())

    @property
    def k_hat(self) -> int:
        return self.N0.shape[0]

    @property
    def m(self) -> int:
        return self.n + self.n_b

    @property
    def is_constant(self) -> bool:
        return all(e.is_constant for blk in (self.C01, self.C11, self.C02, self.C12)
                   for row in blk for e in row)

    def __call__(self, lam: complex) -> tuple[np.ndarray, np.ndarray]:
        """(C0(lam), C1(lam)) as m x m matrices."""
        k, r, nb = self.k_hat, self.m - self.k_hat, self.n_b
        C0 = np.zeros((self.m, self.m), dtype=complex)
        C1 = np.zeros((self.m, self.m), dtype=complex)
        C0[:k, : self.n] = self.N0
        C1[:k, : self.n] = self.N1
        if nb:
            C0[:k, self.n:] = _eval_block(self.C01, lam, nb)
            C1[:k, self.n:] = _eval_block(self.C11, lam, nb)
            C0[k:, self.n:] = _eval_block(self.C02, lam, nb)
            C1[k:, self.n:] = _eval_block(self.C12, lam, nb)
        elif r:
            raise PairError("rows below the N-block need endpoint maps at b")
        return C0, C1

    def describe(self) -> dict:
        blk = lambda b: [[str(e) for e in row] for row in b]  # noqa: E731
        return {"n": self.n, "n_b": self.n_b, "k_hat": self.k_hat,
                "N0": _cplx_rows(self.N0), "N1": _cplx_rows(self.N1),
                "C01": blk(self.C01), "C11": blk(self.C11), "C02": blk(self.C02), "C12": blk(self.C12)}


def _cplx_rows(a: np.ndarray) -> list[list[str]]:
    return [[_fmt_c(c) for c in row] for row in a]


def build_pair(n: int, endpoint, spec: dict) -> BoundaryPair:
    """Assemble a pair from block descriptions.

    ``endpoint`` is an EndpointClass or the integer n_b.  ``spec`` maps block
    names (N0, N1, C01, C11, C02, C12) to nested row lists of numbers,
    :class:`Rational` objects or entry strings.  Missing C' blocks are zero.
    """
    n_b = endpoint if isinstance(endpoint, int) else endpoint.n_b
    N0 = np.atleast_2d(np.asarray(spec["N0"], dtype=complex))
    N1 = np.atleast_2d(np.asarray(spec["N1"], dtype=complex))
    if N0.shape != N1.shape or N0.shape[1] != n:
        raise PairError(f"N0 and N1 must both be k_hat x {n}")
    k = N0.shape[0]
    m = n + n_b
    if not 0 < k <= m:
        raise PairError(f"N-block has {k} rows, need 1..{m}")
    return BoundaryPair(
        n, n_b, N0, N1,
        _block(spec.get("C01"), (k, n_b), "C01"),
        _block(spec.get("C11"), (k, n_b), "C11"),
        _block(spec.get("C02"), (m - k, n_b), "C02"),
        _block(spec.get("C12"), (m - k, n_b), "C12"),
    )


def im_part(X: np.ndarray) -> np.ndarray:
    """Hermitian imaginary part (X - X*)/(2i)."""
    return (X - X.conj().T) / 2j


DEFAULT_SAMPLES = (1j, 1 + 2j, -1 + 2j, 2 + 1j, -2 + 1j)


@dataclass
class ValidityReport:
    checks: dict[str, bool]
    values: dict[str, float]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def __str__(self) -> str:
        return "\n".join(f"{k:<28} {'pass' if v else 'FAIL'}  {self.values.get(k, 0.0):.3e}"
                         for k, v in self.checks.items())


def validate_pair(pair: BoundaryPair, samples: Sequence[complex] = DEFAULT_SAMPLES) -> ValidityReport:
    """Report-only checks of the Nevanlinna-pair conditions at upper half-plane samples."""
    worst_im, worst_inv, worst_link, worst_rank = np.inf, np.inf, 0.0, np.inf
    for lam in samples:
        lam = complex(lam)
        if lam.imag <= 0:
            raise PairError("validation samples must lie in the upper half-plane")
        C0, C1 = pair(lam)
        D0, D1 = pair(lam.conjugate())
        worst_im = min(worst_im, float(np.linalg.eigvalsh(im_part(C1 @ C0.conj().T)).min()))
        sv = np.linalg.svd(C0 - 1j * C1, compute_uv=False)
        worst_inv = min(worst_inv, float(sv.min() / max(1.0, sv.max())))
        link = C1 @ D0.conj().T - C0 @ D1.conj().T
        worst_link = max(worst_link, float(np.abs(link).max()))
        sv2 = np.linalg.svd(np.hstack([C0, C1]), compute_uv=False)
        worst_rank = min(worst_rank, float(sv2.min() / max(1.0, sv2.max())))
    N0, N1 = pair.N0, pair.N1
    sym = n_block_asymmetry(N0, N1)
    rank = np.linalg.matrix_rank(np.hstack([N0, N1]), tol=PSD_TOL)
    C0, C1 = pair(complex(samples[0]))
    k = pair.k_hat
    shape_ok = bool(np.all(C0[k:, : pair.n] == 0) and np.all(C1[k:, : pair.n] == 0))
    checks = {
        "(i) Im C1 C0* >= 0": worst_im >= -PSD_TOL,
        "(ii) C0 - iC1 invertible": worst_inv > PSD_TOL,
        "(iii) conjugate link": worst_link <= PSD_TOL,
        "(iv) triangular shape": shape_ok,
        "(v) N symmetric, full rank": sym <= PSD_TOL and rank == k and pair.n <= k <= pair.m,
        "admissible rank": worst_rank > PSD_TOL,
    }
    values = {
        "(i) Im C1 C0* >= 0": worst_im,
        "(ii) C0 - iC1 invertible": worst_inv,
        "(iii) conjugate link": worst_link,
        "(iv) triangular shape": 0.0 if shape_ok else 1.0,
        "(v) N symmetric, full rank": sym,
        "admissible rank": worst_rank,
    }
    return ValidityReport(checks, values)


def n_block_asymmetry(N0: np.ndarray, N1: np.ndarray) -> float:
    """Defect of symmetry of the relation {(a, b): N0 a + N1 b = 0}.

    For k_hat = n this is equivalent to N0 N1* = N1 N0*; for larger k_hat
    the relation is a proper subrelation and the form b*a - a*b is tested
    on a kernel basis directly.
    """
    from scipy.linalg import null_space

    n = N0.shape[1]
    K = null_space(np.hstack([N0, N1]), rcond=PSD_TOL)
    if K.shape[1] == 0:
        return 0.0
    a, b = K[:n], K[n:]
    return float(np.abs(b.conj().T @ a - a.conj().T @ b).max())


def n_block_kernel(pair: BoundaryPair, lam: complex) -> np.ndarray:
    """Orthonormal basis of the left-end part of the relation at lam (pairs of n-vectors)."""
    from scipy.linalg import null_space

    C0, C1 = pair(lam)
    n = pair.n
    # relation vectors supported on C^n + C^n: C0[:, :n] a + C1[:, :n] b = 0
    return null_space(np.hstack([C0[:, :n], C1[:, :n]]))


def n_block_drift(pair: BoundaryPair, lam1: complex = 1j, lam2: complex = 2 + 3j) -> float:
    """Largest principal angle between the left-end parts at two lambdas."""
    a, b = n_block_kernel(pair, lam1), n_block_kernel(pair, lam2)
    if a.shape[1] != b.shape[1]:
        return float(np.pi / 2)
    if a.shape[1] == 0:
        return 0.0
    return float(np.max(subspace_angles(a, b)))


def symplectic_j(n: int) -> np.ndarray:
    """J = [[0, -I], [I, 0]]."""
    z, i = np.zeros((n, n)), np.eye(n)
    return np.block([[z, -i], [i, z]])


@dataclass(frozen=True)
class PairGeometry:
    N_prime: np.ndarray
    N_hat: np.ndarray
    W_prime: np.ndarray
    W_inv: np.ndarray
    J_W: np.ndarray
    cond_W: float

    @property
    def k_hat(self) -> int:
        return self.N_prime.shape[0]

    @property
    def J1(self) -> np.ndarray:
        return self.J_W[: self.k_hat, : self.k_hat]

    @property
    def J2(self) -> np.ndarray:
        return self.J_W[self.k_hat:, : self.k_hat]

    @property
    def J4(self) -> np.ndarray:
        return self.J_W[self.k_hat:, self.k_hat:]

    @property
    def phi_n_init(self) -> np.ndarray:
        """(-N0*; N1*), the first block column of W'."""
        return self.W_prime[:, : self.k_hat]

    @property
    def phi_t_init(self) -> np.ndarray:
        return self.W_prime[:, self.k_hat:]


def _complement(V: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Orthonormal basis of range(V)^perp, seeded by the columns of J V.

    Gram-Schmidt over J V followed by the standard basis; the seed order
    makes the basis reproducible (for N = (0, 1) it returns (-1, 0)).
    """
    d, k = V.shape
    need = d - k
    Q, _ = np.linalg.qr(V)
    basis: list[np.ndarray] = []
    for cand in np.hstack([J @ V, np.eye(d)]).T:
        if len(basis) == need:
            break
        v = cand.astype(complex) - Q @ (Q.conj().T @ cand)
        for b in basis:
            v = v - b * np.vdot(b, v)
        # second pass for numerical orthogonality
        v = v - Q @ (Q.conj().T @ v)
        for b in basis:
            v = v - b * np.vdot(b, v)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
    if len(basis) != need:
        raise PairError("could not complete W'")
    return np.array(basis).T if basis else np.zeros((d, 0), dtype=complex)


def n_block_data(pair: BoundaryPair) -> PairGeometry:
    N0, N1 = pair.N0, pair.N1
    Np = np.hstack([-N0, N1])
    G = Np @ Np.conj().T
    if np.linalg.matrix_rank(G, tol=PSD_TOL) != pair.k_hat:
        raise PairError("N' N'* is singular")
    N_hat = Np.conj().T @ np.linalg.inv(G)
    J = symplectic_j(pair.n)
    V1 = Np.conj().T
    W = np.hstack([V1, _complement(V1, J)])
    cond = float(np.linalg.cond(W))
    if cond > 1e8:
        raise PairError(f"W' too ill-conditioned (cond {cond:.2e})")
    W_inv = np.linalg.inv(W)
    J_W = W_inv @ J @ W_inv.conj().T
    return PairGeometry(Np, N_hat, W, W_inv, J_W, cond)


__all__ = [
    "Rational", "BoundaryPair", "PairGeometry", "ValidityReport", "PairError",
    "build_pair", "validate_pair", "n_block_data", "n_block_asymmetry", "n_block_kernel", "n_block_drift",
    "im_part", "symplectic_j", "DEFAULT_SAMPLES", "PSD_TOL",
]
