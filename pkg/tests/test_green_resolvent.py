import cmath
import math

import numpy as np
import pytest
import sympy

from weylkit.green_resolvent import (apply_resolvent, canonical_identity_defect, green_kernel, kernel_bundle,
                                     norm_inequality_defect, phi_n, reconstruction_defect, v_p)

from conftest import PAIR_SPECS, get_case


def sqrt_up(lam):
    k = cmath.sqrt(lam)
    return k if k.imag >= 0 else -k


def manufactured(g_text):
    """(g, f) with f = -g'' - i g, both as numpy callables (sympy oracle)."""
    t = sympy.Symbol("t", real=True)
    g = sympy.sympify(g_text, locals={"t": t})
    f = -sympy.diff(g, t, 2) - sympy.I * g
    g_fn = sympy.lambdify(t, g, "numpy")
    f_fn = sympy.lambdify(t, f, "numpy")
    return (lambda x: np.asarray(g_fn(x), dtype=complex) * np.ones_like(x),
            lambda x: np.asarray(f_fn(x), dtype=complex) * np.ones_like(x))


def test_phi_n_closed_forms():
    d = get_case("dirichlet_half")
    sol = phi_n(d.problem, d.geom, 1.0, 2.0)
    assert sol.y(math.pi / 2)[0] == pytest.approx(1.0, abs=1e-9)
    n = get_case("neumann_half")
    sol = phi_n(n.problem, n.geom, 0.0, 3.0)
    assert np.allclose(sol.y(np.linspace(0, 3, 7))[:, 0], -1.0, atol=1e-12)
    sol = phi_n(n.problem, n.geom, 4.0, 3.0)
    assert sol.y(1.3)[0] == pytest.approx(-math.cos(2 * 1.3), abs=1e-9)


def test_v_p_closed_forms():
    d = get_case("dirichlet_half")
    v = v_p(d.problem, d.triplet, d.pair, 1j)
    k = sqrt_up(1j)
    t = np.array([0.0, 0.5, 2.0, 7.0])
    assert np.allclose(v.sol.y(t)[:, 0], np.exp(1j * k * t), atol=1e-8)
    dd = get_case("dirichlet_pi")
    v = v_p(dd.problem, dd.triplet, dd.pair, 1j)
    k = cmath.sqrt(1j)
    t = np.linspace(0, math.pi, 9)
    want = np.sin(k * (math.pi - t)) / np.sin(k * math.pi)
    assert np.allclose(v.sol.y(t)[:, 0], want, atol=1e-8)
    assert v.gamma_residual < 1e-8


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_reconstruction_from_phi_n_and_phi_t(name):
    case = get_case(name)
    b = kernel_bundle(*case.args, 1 + 1j)
    t = np.linspace(0, min(b.horizon, 5.0), 13)
    assert reconstruction_defect(b, case.geom, t) <= 1e-6 * max(1, np.abs(b.vP(t)).max())
    assert b.bc_residual < 1e-8


def test_classical_half_line_kernel():
    d = get_case("dirichlet_half")
    b = kernel_bundle(*d.args, 1j)
    k = sqrt_up(1j)
    want = np.exp(1j * k * 1.0) * np.sin(k * 0.5) / k
    assert abs(green_kernel(b, 1.0, 0.5) - want) < 1e-8
    assert abs(green_kernel(b, 0.5, 1.0) - want) < 1e-8


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_green_kernel_symmetry(name):
    case = get_case(name)
    lam = 0.5 + 1j
    b = kernel_bundle(*case.args, lam)
    bc = kernel_bundle(*case.args, np.conj(lam))
    rng = np.random.default_rng(11)
    span = min(b.horizon, 5.0)
    for x, t in rng.uniform(0, span, size=(5, 2)):
        assert abs(green_kernel(b, x, t) - np.conj(green_kernel(bc, t, x))) < 1e-8


def test_kernel_is_real_symmetric_at_negative_lambda():
    dd = get_case("dirichlet_pi")
    b = kernel_bundle(*dd.args, -1.0)
    for x, t in ((0.3, 2.0), (1.5, 1.1), (2.5, 0.2)):
        g1, g2 = green_kernel(b, x, t), green_kernel(b, t, x)
        assert abs(g1.imag) < 1e-8 and abs(g1 - g2) < 1e-8


@pytest.mark.parametrize("name,g_text,x_end", [
    ("dirichlet_half", "t**2*exp(-t)", None),
    ("dirichlet_pi", "t*sin(t)**2", None),
])
def test_manufactured_solution(name, g_text, x_end):
    case = get_case(name)
    g, f = manufactured(g_text)
    b = kernel_bundle(*case.args, 1j)
    r = apply_resolvent(b, f, x_end=x_end)
    assert r.residual <= 1e-6 and not r.flagged
    err = np.sqrt(np.sum(np.abs(r.y - g(r.x)) ** 2) / np.sum(np.abs(g(r.x)) ** 2))
    assert err <= 1e-6


def test_zero_source_gives_zero():
    dd = get_case("dirichlet_pi")
    r = apply_resolvent(kernel_bundle(*dd.args, 1j), lambda t: 0 * t)
    assert np.all(r.y == 0)


def test_fourth_order_manufactured_solution():
    beam = get_case("clamped_beam")
    t = sympy.Symbol("t", real=True)
    g = t ** 2 * (1 - t) ** 2 * sympy.cos(t)  # clamped at 0 and 1
    f = sympy.diff(g, t, 4) - sympy.I * g
    f_fn = sympy.lambdify(t, f, "numpy")
    g_fn = sympy.lambdify(t, g, "numpy")
    b = kernel_bundle(*beam.args, 1j)
    r = apply_resolvent(b, lambda x: np.asarray(f_fn(x), dtype=complex))
    err = np.sqrt(np.sum(np.abs(r.y - g_fn(r.x)) ** 2) / np.sum(np.abs(g_fn(r.x)) ** 2))
    assert r.residual <= 1e-6 and err <= 1e-6


@pytest.mark.parametrize("name", ["dirichlet_half", "dirichlet_pi", "periodic_pi", "clamped_beam"])
def test_canonical_identity_for_constant_pairs(name):
    case = get_case(name)
    for lam, mu in ((1j, 1j), (1j, 2 + 1j), (1 + 1j, -1 + 2j)):
        d, tail = canonical_identity_defect(*case.args, lam, mu)
        assert d <= 1e-6 + tail


def test_norm_inequality_is_strict_for_lambda_dependent_pair():
    assert norm_inequality_defect(*get_case("robin_pi").args, 1j) > 1e-3
    assert abs(norm_inequality_defect(*get_case("dirichlet_pi").args, 1j)) < 1e-8
