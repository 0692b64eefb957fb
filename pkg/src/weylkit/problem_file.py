"""Sectioned problem files (INI syntax, read with configparser).

    [expression]
    n  = 1
    p0 = 1
    p1 = 0

    [interval]
    b        = pi          ; a number, inf, pi, or a constant expression such as 2*pi
    endpoint = auto        ; auto | regular | singular

    [triplet]
    anchor    = 0
    horizon   = 40         ; optional
    tolerance = 1e-10

    [pair]
    N0  = 0                ; rows separated by ';', entries by ','
    N1  = 1
    C02 = 0
    C12 = [0, 1]           ; rational entries: poly or poly/poly, poly = [c0, c1, ...]

    [task]
    interval = 0:30        ; any command-specific defaults

Entries of N0/N1 are complex literals (``1``, ``-2.5``, ``1j``).  C-block
entries also accept ``lam`` for the polynomial [0, 1].
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .boundary import BoundaryTriplet, ClassificationError, TripletError, make_triplet
from .expr_dsl import ExprDomainError, ExprSyntaxError, parse_expr
from .nev_pairs import BoundaryPair, PairError, PairGeometry, _split_top, build_pair, n_block_data
from .ode_engine import Problem


class ProblemFileError(ValueError):
    """Bad problem file; the message names the file, section and key."""


@dataclass(frozen=True)
class ProblemFile:
    path: str
    problem: Problem
    anchor: float
    horizon: float | None
    tol: float
    pair_rows: dict[str, list[list[str]]]
    task: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Setup:
    """Everything a command needs: problem, triplet, pair and its geometry."""

    spec: ProblemFile
    problem: Problem
    triplet: BoundaryTriplet
    pair: BoundaryPair
    geom: PairGeometry


_PI = re.compile(r"\bpi\b")


def parse_endpoint_value(text: str) -> float:
    text = text.strip()
    if text.lower() in ("inf", "infinity", "+inf"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        pass
    e = parse_expr(_PI.sub(repr(math.pi), text))
    if not e.is_constant:
        raise ValueError(f"b must be constant, got {text!r}")
    return float(e(0.0))


def parse_rows(text: str) -> list[list[str]]:
    rows = [r for r in _split_top(text, ";") if r != ""]
    return [[e for e in _split_top(r, ",") if e != ""] for r in rows]


def _where(path: str, section: str, key: str) -> str:
    return f"{path}: [{section}] {key}"


def load_problem_file(path: str | Path) -> ProblemFile:
    path = str(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep N0/C12 case
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ProblemFileError(f"{path}: cannot read ({exc.strerror})") from exc
    except configparser.Error as exc:
        raise ProblemFileError(f"{path}: {exc}") from exc
    for sec in ("expression", "interval", "pair"):
        if not cp.has_section(sec):
            raise ProblemFileError(f"{path}: missing section [{sec}]")
    ex = cp["expression"]
    try:
        n = int(ex.get("n", "1"))
    except ValueError as exc:
        raise ProblemFileError(f"{_where(path, 'expression', 'n')}: not an integer") from exc
    if n < 1:
        raise ProblemFileError(f"{_where(path, 'expression', 'n')}: order must be >= 1")
    coeffs = []
    for j in range(n + 1):
        key = f"p{j}"
        if key not in ex:
            raise ProblemFileError(f"{_where(path, 'expression', key)}: missing coefficient")
        try:
            coeffs.append(parse_expr(ex[key]))
        except ExprSyntaxError as exc:
            raise ProblemFileError(f"{_where(path, 'expression', key)}: {exc}") from exc
    iv = cp["interval"]
    try:
        b = parse_endpoint_value(iv.get("b", "inf"))
    except (ValueError, ExprSyntaxError, ExprDomainError) as exc:
        raise ProblemFileError(f"{_where(path, 'interval', 'b')}: {exc}") from exc
    hint = iv.get("endpoint", "auto").strip().lower()
    closed = {"auto": None, "regular": True, "singular": False}.get(hint, "bad")
    if closed == "bad":
        raise ProblemFileError(f"{_where(path, 'interval', 'endpoint')}: expected auto, regular or singular")
    tr = cp["triplet"] if cp.has_section("triplet") else {}
    try:
        anchor = float(tr.get("anchor", "0"))
        horizon = float(tr["horizon"]) if "horizon" in tr else None
        tol = float(tr.get("tolerance", "1e-10"))
    except ValueError as exc:
        raise ProblemFileError(f"{path}: [triplet] {exc}") from exc
    rows = {}
    for key in ("N0", "N1", "C01", "C11", "C02", "C12"):
        if key in cp["pair"]:
            rows[key] = parse_rows(cp["pair"][key])
    for key in ("N0", "N1"):
        if key not in rows:
            raise ProblemFileError(f"{_where(path, 'pair', key)}: missing")
    try:
        problem = Problem(n, tuple(coeffs), b, closed, Path(path).stem)
    except (ValueError, ExprDomainError) as exc:
        raise ProblemFileError(f"{path}: [expression] {exc}") from exc
    task = dict(cp["task"]) if cp.has_section("task") else {}
    return ProblemFile(path, problem, anchor, horizon, tol, rows, task)


def _complex_rows(rows: list[list[str]], where: str) -> list[list[complex]]:
    from .nev_pairs import _parse_number

    try:
        return [[_parse_number(e) for e in r] for r in rows]
    except PairError as exc:
        raise ProblemFileError(f"{where}: {exc}") from exc


def build_setup(spec: ProblemFile, horizon: float | None = None, tol: float | None = None) -> Setup:
    """Classify, build the triplet and the pair.  Raises ProblemFileError on bad pair data."""
    problem = spec.problem
    try:
        triplet = make_triplet(problem, anchor=spec.anchor, horizon=horizon or spec.horizon,
                               tol=tol or spec.tol)
    except (ClassificationError, TripletError):
        raise
    blocks = {}
    for key, rows in spec.pair_rows.items():
        where = _where(spec.path, "pair", key)
        blocks[key] = _complex_rows(rows, where) if key in ("N0", "N1") else rows
    try:
        pair = build_pair(problem.n, triplet.endpoint, blocks)
        geom = n_block_data(pair)
    except (PairError, ValueError) as exc:
        raise ProblemFileError(f"{spec.path}: [pair] {exc}") from exc
    return Setup(spec, problem, triplet, pair, geom)


__all__ = ["ProblemFile", "ProblemFileError", "Setup", "load_problem_file", "build_setup",
           "parse_endpoint_value", "parse_rows"]
