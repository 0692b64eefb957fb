"""Command line front end: ``weylkit <command> --problem FILE [options]``.

Results go to ``--out PATH`` as CSV (complex values split into _re/_im
columns) with a JSON sidecar next to it (PATH with suffix .json).  Without
``--out`` the CSV is printed to stdout and the sidecar is skipped.

Exit codes: 0 success, 1 usage, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .boundary import ClassificationError, TripletError, WeylError, classify_endpoint
from .charm import (STRUCT_GRID, SingularPairError, StructureError, char_matrix, characterize,
                    herglotz_battery, krein_offset, m_function_batch, m_function_krein,
                    strictness_and_growth, structure_defect)
from .expr_dsl import ExprDomainError, ExprSyntaxError, parse_expr
from .green_resolvent import (ResolventError, apply_resolvent, canonical_identity_defect, green_kernel,
                              kernel_bundle, norm_inequality_defect, phi_n, reconstruction_defect)
from .nev_pairs import n_block_drift, validate_pair
from .ode_engine import PropagationError, gauss_nodes
from .problem_file import ProblemFileError, Setup, build_setup, load_problem_file
from .spectral import (DEFAULT_EPS, SpectralError, ac_nodes, fourier_forward, fourier_inverse,
                       invert_stieltjes, parseval_residual, spectral_energy)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

VALIDATION_ERRORS = (ProblemFileError, ClassificationError, TripletError, StructureError,
                     ExprSyntaxError)
NUMERICAL_ERRORS = (WeylError, PropagationError, SingularPairError, SpectralError, ResolventError,
                    ExprDomainError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class ValidationFailure(Exception):
    pass


# -- argument helpers -------------------------------------------------------

def _axis(spec: str) -> np.ndarray:
    parts = spec.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
            if num < 1:
                raise ValueError
            return np.linspace(lo, hi, num)
    except ValueError:
        pass
    raise UsageError(f"bad grid axis {spec!r}; use v or lo:hi:count")


def parse_grid(spec: str) -> np.ndarray:
    """``re=lo:hi:n im=v`` (cartesian, im outer), or ``list=z1,z2,...``."""
    fields = dict(tok.split("=", 1) for tok in spec.split() if "=" in tok)
    if not fields or len(fields) != len(spec.split()):
        raise UsageError(f"bad grid spec {spec!r}")
    if "list" in fields:
        try:
            return np.array([complex(z.strip().replace("i", "j")) for z in fields["list"].split(",")])
        except ValueError as exc:
            raise UsageError(f"bad lambda list in {spec!r}") from exc
    re_ax = _axis(fields.get("re", "0"))
    im_ax = _axis(fields.get("im", "1"))
    return np.array([r + 1j * i for i in im_ax for r in re_ax])


def parse_interval(spec: str) -> tuple[float, float]:
    try:
        a, c = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise UsageError(f"bad interval {spec!r}; use a:c") from exc
    if not c > a:
        raise UsageError(f"empty interval {spec!r}")
    return a, c


def parse_eps(spec: str) -> tuple[float, ...]:
    try:
        eps = tuple(float(x) for x in spec.split(","))
    except ValueError as exc:
        raise UsageError(f"bad eps list {spec!r}") from exc
    if len(eps) < 2 or any(e <= 0 for e in eps):
        raise UsageError("need at least two positive eps values")
    return eps


def _opt(args, name: str, task: dict, parse: Callable, default=None):
    v = getattr(args, name, None)
    if v is None:
        v = task.get(name)
    if v is None:
        return default
    return parse(v) if isinstance(v, str) else v


# -- output -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _cplx_cols(prefix: str, M: np.ndarray) -> tuple[list[str], list[str]]:
    M = np.asarray(M)
    head, vals = [], []
    if M.ndim == 1:
        for i, z in enumerate(M):
            head += [f"{prefix}{i}_re", f"{prefix}{i}_im"]
            vals += [_fmt(z.real), _fmt(z.imag)]
        return head, vals
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            head += [f"{prefix}{i}{j}_re", f"{prefix}{i}{j}_im"]
            vals += [_fmt(M[i, j].real), _fmt(M[i, j].imag)]
    return head, vals


class Table:
    def __init__(self):
        self.header: list[str] | None = None
        self.rows: list[list[str]] = []

    def add(self, header: list[str], values: list[str]) -> None:
        if self.header is None:
            self.header = header
        elif header != self.header:
            raise RuntimeError("inconsistent CSV columns")
        self.rows.append(values)

    def text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header or [])
        w.writerows(self.rows)
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, (np.floating, float)):
        f = float(x)
        return f if math.isfinite(f) else str(f)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def emit(args, table: Table, meta: dict, extra: dict[str, Table] | None = None) -> None:
    import scipy

    meta = dict(meta)
    meta["versions"] = {"weylkit": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    meta["command"] = args.command
    if args.out is None:
        sys.stdout.write(table.text())
        for name, t in (extra or {}).items():
            sys.stdout.write(f"\n# {name}\n{t.text()}")
        return
    out = Path(args.out)
    out.write_text(table.text(), encoding="utf-8")
    files = {"main": out.name}
    for name, t in (extra or {}).items():
        p = out.with_name(f"{out.stem}_{name}{out.suffix or '.csv'}")
        p.write_text(t.text(), encoding="utf-8")
        files[name] = p.name
    meta["files"] = files
    out.with_suffix(".json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map, optionally on a thread pool."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _setup(args) -> Setup:
    spec = load_problem_file(args.problem)
    return build_setup(spec, horizon=args.horizon, tol=args.tol)


def _base_meta(s: Setup, args) -> dict:
    return {
        "problem": s.spec.path,
        "endpoint": s.triplet.endpoint.kind,
        "n": s.problem.n, "n_b": s.triplet.n_b, "k_hat": s.pair.k_hat,
        "tolerance": s.triplet.tol,
        "b_trunc": s.triplet.b_trunc,
        "green_identity_residual": s.triplet.green_residual,
        "threads": args.threads,
    }


def _grid_from(args, s: Setup, default: str = "re=-1:1:5 im=1") -> np.ndarray:
    spec = args.grid or s.spec.task.get("grid", default)
    lams = parse_grid(spec)
    if s.triplet.endpoint.kind == "LimitPoint" and np.any(lams.imag == 0):
        raise UsageError("real lambda not allowed for a limit-point problem")
    return lams


# -- commands -----------------------------------------------------------------

def cmd_classify(args) -> int:
    spec = load_problem_file(args.problem)
    cls = classify_endpoint(spec.problem)
    t = Table()
    t.add(["kind", "n_b"], [cls.kind, str(cls.n_b)])
    emit(args, t, {"problem": spec.path, "endpoint": cls.kind, "diagnostics": cls.diagnostics})
    return EXIT_OK


def cmd_mfun(args) -> int:
    s = _setup(args)
    lams = _grid_from(args, s)

    def one(lam):
        sample = characterize(s.problem, s.triplet, s.pair, s.geom, lam)
        if lam.imag == 0:
            return sample.mP, sample, 0.0
        kr = m_function_krein(s.problem, s.triplet, s.pair, s.geom, lam)
        gap = float(np.abs(kr - sample.mP).max() / (1 + np.abs(sample.mP).max()))
        return sample.mP, sample, gap

    res = _pmap(one, list(lams), args.threads)
    t = Table()
    worst_struct = 0.0
    for lam, (mP, sample, gap) in zip(lams, res):
        h, v = _cplx_cols("mP", mP)
        t.add(["re", "im"] + h + ["route_gap"], [_fmt(lam.real), _fmt(lam.imag)] + v + [_fmt(gap)])
        worst_struct = max(worst_struct, max(structure_defect(sample.OmegaW, s.geom).values()))
    meta = _base_meta(s, args)
    meta.update({"rows": len(lams), "max_route_gap": max(r[2] for r in res),
                 "max_structure_defect": worst_struct})
    emit(args, t, meta)
    return EXIT_OK


def cmd_charmatrix(args) -> int:
    s = _setup(args)
    lams = _grid_from(args, s)
    res = _pmap(lambda lam: char_matrix(s.problem, s.triplet, s.pair, lam), list(lams), args.threads)
    t = Table()
    for lam, sample in zip(lams, res):
        h, v = _cplx_cols("Omega", sample.Omega)
        hm, vm = _cplx_cols("M", sample.M)
        t.add(["re", "im"] + h + hm, [_fmt(lam.real), _fmt(lam.imag)] + v + vm)
    meta = _base_meta(s, args)
    meta["max_cond"] = max(r.cond for r in res)
    emit(args, t, meta)
    return EXIT_OK


def _mp_batch(s: Setup, threads: int) -> Callable:
    def f(lams):
        lams = np.asarray(lams)
        if threads <= 1 or len(lams) < 64:
            return m_function_batch(s.problem, s.triplet, s.pair, s.geom, lams)
        chunks = np.array_split(lams, threads)
        parts = _pmap(lambda c: m_function_batch(s.problem, s.triplet, s.pair, s.geom, c), chunks, threads)
        return np.concatenate(parts)
    return f


def _spectrum(args, s: Setup):
    a, c = _opt(args, "interval", s.spec.task, parse_interval, (0.0, 30.0))
    eps = _opt(args, "eps", s.spec.task, parse_eps, DEFAULT_EPS)
    step = _opt(args, "step", s.spec.task, float, None)
    return invert_stieltjes(_mp_batch(s, args.threads), (a, c), eps, grid_step=step)


def cmd_spectrum(args) -> int:
    s = _setup(args)
    sig = _spectrum(args, s)
    t = Table()
    for x, v in zip(sig.grid, sig.values):
        h, vals = _cplx_cols("Sigma", v)
        t.add(["s"] + h, [_fmt(x)] + vals)
    ta = Table()
    for at in sig.atoms:
        h, vals = _cplx_cols("w", at.weight)
        ta.add(["s"] + h + ["stability"], [_fmt(at.s)] + vals + [_fmt(at.stability)])
    if not sig.atoms:
        ta.header = ["s"] + _cplx_cols("w", np.zeros((sig.dim, sig.dim)))[0] + ["stability"]
    meta = _base_meta(s, args)
    meta.update({"spectral": sig.meta, "atoms": len(sig.atoms),
                 "min_increment_eigenvalue": sig.min_increment_eig(),
                 "max_increment_rank": sig.max_increment_rank()})
    emit(args, t, meta, {"atoms": ta})
    return EXIT_OK


def _dsl_function(text: str) -> Callable:
    e = parse_expr(text)
    return lambda t: e(t)


def _transform(args, s: Setup):
    f_text = _opt(args, "f", s.spec.task, str)
    if f_text is None:
        raise UsageError("need --f (or f in [task])")
    f = _dsl_function(f_text)
    beta = _opt(args, "support", s.spec.task, float, s.triplet.b_trunc)
    sig = _spectrum(args, s)
    fam = lambda lam, T: phi_n(s.problem, s.geom, lam, T, s.triplet.tol)  # noqa: E731
    g = fourier_forward(f, fam, sig, beta, s.problem.b)
    return f, f_text, beta, sig, fam, g


def _f_norm2(f: Callable, beta: float) -> float:
    t, w = gauss_nodes(np.linspace(0.0, beta, 401), 8)
    return float(np.sum(w * np.abs(f(t)) ** 2))


def cmd_transform(args) -> int:
    s = _setup(args)
    f, f_text, beta, sig, fam, g = _transform(args, s)
    t = Table()
    for kind, ss, vv in (("atom", g.atom_s, g.atom_values), ("density", g.s, g.values)):
        for x, v in zip(ss, vv):
            h, vals = _cplx_cols("g", np.asarray(v))
            t.add(["kind", "s"] + h, [kind, _fmt(x)] + vals)
    if t.header is None:
        t.header = ["kind", "s"]
    meta = _base_meta(s, args)
    n2 = _f_norm2(f, beta)
    meta.update({"f": f_text, "support": beta, "f_norm2": n2, "spectral_energy": spectral_energy(g, sig),
                 "parseval_residual": parseval_residual(n2, g, sig), "density_nodes": len(ac_nodes(sig))})
    emit(args, t, meta)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    s = _setup(args)
    f, f_text, beta, sig, fam, g = _transform(args, s)
    points = int(s.spec.task.get("points", "201"))
    tg = np.linspace(0.0, beta, points)
    fr = fourier_inverse(g, sig, fam, tg)
    fv = np.asarray(f(tg), dtype=float) * np.ones_like(tg)
    t = Table()
    for x, a, b in zip(tg, fv, fr):
        t.add(["t", "f", "f_rec_re", "f_rec_im"], [_fmt(x), _fmt(a), _fmt(b.real), _fmt(b.imag)])
    tq, wq = gauss_nodes(np.linspace(0.0, beta, 401), 8)
    rec = fourier_inverse(g, sig, fam, tq)
    err = float(np.sqrt(np.sum(wq * np.abs(rec - f(tq)) ** 2) / max(np.sum(wq * np.abs(f(tq)) ** 2), 1e-300)))
    meta = _base_meta(s, args)
    meta.update({"f": f_text, "support": beta, "relative_l2_error": err, "atoms": len(sig.atoms)})
    emit(args, t, meta)
    return EXIT_OK


def cmd_resolvent(args) -> int:
    s = _setup(args)
    lam = _grid_from(args, s, "re=0 im=1")[0]
    f_text = _opt(args, "f", s.spec.task, str)
    if f_text is None:
        raise UsageError("need --f (or f in [task])")
    f = _dsl_function(f_text)
    bundle = kernel_bundle(s.problem, s.triplet, s.pair, s.geom, lam)
    x_end = _opt(args, "support", s.spec.task, float, None)
    r = apply_resolvent(bundle, f, x_end=x_end)
    t = Table()
    stride = max(1, (len(r.x) - 1) // 400)
    for x, y in zip(r.x[::stride], r.y[::stride]):
        t.add(["x", "y_re", "y_im"], [_fmt(x), _fmt(y.real), _fmt(y.imag)])
    meta = _base_meta(s, args)
    meta.update({"lambda": lam, "f": f_text, "residual": r.residual, "tail": r.tail, "flagged": r.flagged,
                 "horizon": bundle.horizon, "bc_residual": bundle.bc_residual})
    emit(args, t, meta)
    return EXIT_OK if not r.flagged else EXIT_NUMERICAL


def verify_checks(s: Setup, interval: tuple[float, float] | None = None) -> list[tuple[str, bool, float, str]]:
    """The invariant battery; each entry is (name, passed, value, threshold text)."""
    out: list[tuple[str, bool, float, str]] = []
    p, tr, pair, geom = s.problem, s.triplet, s.pair, s.geom
    rep = validate_pair(pair)
    for name, ok in rep.checks.items():
        out.append((f"pair {name}", ok, rep.values[name], "1e-10"))
    drift = n_block_drift(pair)
    out.append(("left block lambda-independent", drift < 1e-10, drift, "< 1e-10"))
    jw = float(np.abs(geom.J_W + geom.J_W.conj().T).max())
    out.append(("J_W skew", jw < 1e-12, jw, "< 1e-12"))
    out.append(("Green identity of triplet", tr.green_residual < 1e-6, tr.green_residual, "< 1e-6"))
    hb = herglotz_battery(p, tr, pair, geom)
    out.append(("m_P symmetry", hb["symmetry"] <= 1e-8, hb["symmetry"], "<= 1e-8"))
    out.append(("Im m_P / Im lam >= 0", hb["min_im_ratio"] >= -1e-8, hb["min_im_ratio"], ">= -1e-8"))
    out.append(("dual route agreement", hb["route_gap"] <= 1e-8, hb["route_gap"], "<= 1e-8"))
    offs = krein_offset(p, tr, pair, geom)
    out.append(("W' offset constant", offs["spread"] <= 1e-8, offs["spread"], "<= 1e-8"))
    worst = 0.0
    for lam in STRUCT_GRID:
        sm = characterize(p, tr, pair, geom, lam)
        worst = max(worst, max(structure_defect(sm.OmegaW, geom).values()))
        sym = characterize(p, tr, pair, geom, np.conj(lam))
        worst = max(worst, float(np.abs(sym.Omega - sm.Omega.conj().T).max()))
    out.append(("Omega block structure and symmetry", worst <= 1e-8, worst, "<= 1e-8"))
    sg = strictness_and_growth(p, tr, pair, geom)
    expect = int(np.linalg.matrix_rank(np.hstack([pair.N0, pair.N1]))) == 2 * p.n
    out.append(("rank Im Omega matches N invertibility", sg["uniformly_strict"] == expect,
                float(sg["rank_im_omega"]), f"{2 * p.n if expect else '< ' + str(2 * p.n)}"))
    out.append(("||Omega(iy)||/y decreasing", sg["growth_decreasing"], sg["growth"][-1], "monotone"))
    out.append(("Im m_P(lam) > 0", sg["min_im_mP"] > 0, sg["min_im_mP"], "> 0"))
    bundle = kernel_bundle(p, tr, pair, geom, 1j)
    out.append(("v_P boundary conditions", bundle.bc_residual <= 1e-8, bundle.bc_residual, "<= 1e-8"))
    tt = np.linspace(0.0, min(bundle.horizon, 10.0), 11)
    rd = reconstruction_defect(bundle, geom, tt) / max(1.0, float(np.abs(bundle.vP(tt)).max()))
    out.append(("v_P reconstruction", rd <= 1e-6, rd, "<= 1e-6"))
    bc = kernel_bundle(p, tr, pair, geom, -1j)
    rng = np.random.default_rng(2024)
    span = min(bundle.horizon, 5.0)
    gs = max(abs(green_kernel(bundle, x, t) - np.conj(green_kernel(bc, t, x)))
             for x, t in rng.uniform(0, span, size=(5, 2)))
    out.append(("Green kernel symmetry", gs <= 1e-8, gs, "<= 1e-8"))
    if pair.is_constant:
        cid = max(canonical_identity_defect(p, tr, pair, geom, a, b)[0]
                  for a in (1j, 1 + 1j) for b in (1j, 1 + 1j))
        out.append(("canonical identity", cid <= 1e-6, cid, "<= 1e-6"))
    nd = norm_inequality_defect(p, tr, pair, geom, 1j)
    out.append(("norm inequality", nd >= -1e-6, nd, ">= -1e-6"))
    if interval is not None:
        sig = invert_stieltjes(lambda l: m_function_batch(p, tr, pair, geom, l), interval)
        me = sig.min_increment_eig()
        out.append(("spectral increments PSD", me >= -1e-8, me, ">= -1e-8"))
        rk = sig.max_increment_rank()
        out.append(("increment rank <= k_hat", rk <= pair.k_hat, float(rk), f"<= {pair.k_hat}"))
    return out


def cmd_verify(args) -> int:
    s = _setup(args)
    interval = _opt(args, "interval", s.spec.task, parse_interval, None)
    checks = verify_checks(s, interval)
    width = max(len(c[0]) for c in checks)
    t = Table()
    for name, ok, val, thr in checks:
        print(f"{name:<{width}}  {'pass' if ok else 'FAIL'}  {val: .3e}  ({thr})", file=sys.stderr if args.out is None else sys.stdout)
        t.add(["check", "status", "value", "threshold"], [name, "pass" if ok else "FAIL", _fmt(val), thr])
    meta = _base_meta(s, args)
    meta["failed"] = [c[0] for c in checks if not c[1]]
    emit(args, t, meta)
    return EXIT_OK if all(c[1] for c in checks) else EXIT_VALIDATION


COMMANDS = {
    "classify": cmd_classify, "mfun": cmd_mfun, "charmatrix": cmd_charmatrix, "spectrum": cmd_spectrum,
    "transform": cmd_transform, "reconstruct": cmd_reconstruct, "resolvent": cmd_resolvent,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="weylkit", description="m-functions and spectral functions of boundary problems")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--problem", required=True, metavar="PATH")
        sp.add_argument("--grid", metavar="SPEC", help='e.g. "re=-1:1:5 im=1" or "list=1j,2+1j"')
        sp.add_argument("--interval", metavar="a:c")
        sp.add_argument("--eps", metavar="e1,e2,e3")
        sp.add_argument("--step", type=float, metavar="H", help="spectral grid step")
        sp.add_argument("--horizon", type=float, metavar="T")
        sp.add_argument("--tol", type=float, metavar="X")
        sp.add_argument("--threads", type=int, default=1, metavar="K")
        sp.add_argument("--out", metavar="PATH")
        sp.add_argument("--f", metavar="EXPR", help="right-hand side / transformed function in t")
        sp.add_argument("--support", type=float, metavar="BETA")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    if args.tol is not None and args.tol <= 0:
        ap.error("--tol must be positive")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"weylkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VALIDATION_ERRORS as exc:
        print(f"weylkit: validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NUMERICAL_ERRORS as exc:
        print(f"weylkit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
