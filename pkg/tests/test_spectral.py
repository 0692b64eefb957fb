import math

import numpy as np
import pytest

from weylkit.charm import m_function_batch
from weylkit.spectral import (SpectralError, TransformCoefficients, ac_nodes, fourier_forward, fourier_inverse,
                              invert_stieltjes, minimal_family, parseval_residual, spectral_energy)

from conftest import get_case

PI = math.pi


def f_quad(t):
    return t * (PI - t)


def l2_norm2(f, a, b, n=4000):
    x, w = np.polynomial.legendre.leggauss(8)
    br = np.linspace(a, b, n // 8 + 1)
    t = ((br[:-1] + br[1:]) / 2)[:, None] + ((br[1:] - br[:-1]) / 2)[:, None] * x
    ww = ((br[1:] - br[:-1]) / 2)[:, None] * w
    return float(np.sum(ww * np.abs(f(t)) ** 2))


def test_flat_density_is_exact():
    sig = invert_stieltjes(lambda l: np.full((len(l), 1, 1), 1j), (0.0, 5.0), grid_step=0.1)
    assert not sig.atoms
    assert np.abs(sig.values[:, 0, 0].real - sig.grid / PI).max() < 1e-6


def test_dirichlet_atoms(dd_sigma_30):
    atoms = dd_sigma_30.atoms
    assert [round(a.s) for a in atoms] == [1, 4, 9, 16, 25]
    for k, a in zip(range(1, 6), atoms):
        assert abs(a.s - k * k) < 1e-5
        w = a.weight[0, 0].real
        assert abs(w - 2 * k * k / PI) <= 1e-3 * 2 * k * k / PI
        assert a.stability > 0.75


def test_dirichlet_function_is_monotone_step(dd_sigma_30):
    assert dd_sigma_30.min_increment_eig() >= -1e-8
    assert dd_sigma_30.max_increment_rank() <= 1
    assert dd_sigma_30.at(0.5)[0, 0].real == pytest.approx(0.0, abs=1e-6)
    assert dd_sigma_30.at(5.0)[0, 0].real == pytest.approx((2 + 8) / PI, rel=1e-5)


def test_half_line_density():
    case = get_case("dirichlet_half")
    sig = invert_stieltjes(lambda l: m_function_batch(*case.args, l), (0.0, 4.0), grid_step=0.02)
    assert not sig.atoms
    want = 16 / (3 * PI)
    assert abs(sig.values[-1, 0, 0].real - want) <= 1e-3 * want
    mid = sig.at(1.0)[0, 0].real
    assert mid == pytest.approx(2 / (3 * PI), rel=1e-3)


def test_periodic_double_eigenvalue_has_rank_two():
    case = get_case("periodic_pi")
    sig = invert_stieltjes(lambda l: m_function_batch(*case.args, l), (-1.0, 17.0), grid_step=0.05)
    s = [round(a.s, 4) for a in sig.atoms]
    assert s == [0.0, 4.0, 16.0]
    ranks = [np.linalg.matrix_rank(a.weight, tol=1e-6) for a in sig.atoms]
    assert ranks == [1, 2, 2]
    assert sig.max_increment_rank() <= 2 and sig.min_increment_eig() >= -1e-8


def test_lower_half_plane_is_refused():
    with pytest.raises((ValueError, SpectralError)):
        invert_stieltjes(lambda l: np.full((len(l), 1, 1), 1j), (0.0, 1.0), eps_seq=(1e-2, -1e-3))


def test_delta_shifts_reported_points():
    sig = invert_stieltjes(lambda l: np.full((len(l), 1, 1), 1j), (0.0, 1.0), grid_step=0.1, delta=0.25)
    assert sig.meta["delta"] == 0.25


# -- transforms -------------------------------------------------------------------

def test_forward_of_first_mode(dd_sigma_30, dd_family):
    g = fourier_forward(np.sin, dd_family, dd_sigma_30, PI, PI)
    assert g.atom_values[0, 0].real == pytest.approx(PI / 2, abs=1e-8)
    assert np.abs(g.atom_values[1:]).max() < 1e-8
    assert parseval_residual(PI / 2, g, dd_sigma_30) <= 1e-4


def test_forward_of_quadratic(dd_sigma_30, dd_family):
    g = fourier_forward(f_quad, dd_family, dd_sigma_30, PI, PI)
    for k, v in zip(range(1, 6), g.atom_values[:, 0]):
        want = 4 / k ** 4 if k % 2 else 0.0
        assert abs(v - want) < 1e-8


def test_zero_in_zero_out(dd_sigma_30, dd_family):
    g = fourier_forward(lambda t: 0 * t, dd_family, dd_sigma_30, PI, PI)
    assert np.all(g.atom_values == 0)
    t = np.linspace(0, PI, 7)
    assert np.all(fourier_inverse(g, dd_sigma_30, dd_family, t) == 0)
    assert parseval_residual(0.0, g, dd_sigma_30) == 0.0


def test_single_atom_injection(dd_sigma_30, dd_family):
    g0 = fourier_forward(lambda t: 0 * t, dd_family, dd_sigma_30, PI, PI)
    vals = np.zeros_like(g0.atom_values)
    vals[0, 0] = 1.0
    g = TransformCoefficients(g0.s, g0.values, g0.atom_s, vals, PI)
    t = np.linspace(0, PI, 11)
    out = fourier_inverse(g, dd_sigma_30, dd_family, t)
    assert np.allclose(out, (2 / PI) * np.sin(t), atol=1e-5)
    assert spectral_energy(g, dd_sigma_30) == pytest.approx(2 / PI, rel=1e-5)


def test_parseval_with_first_fifteen_modes(dd_sigma_wide, dd_family):
    atoms = tuple(a for a in dd_sigma_wide.atoms if a.s < 15.5 ** 2)
    sig = type(dd_sigma_wide)(dd_sigma_wide.dim, dd_sigma_wide.grid, dd_sigma_wide.values, atoms,
                              dd_sigma_wide.density, dd_sigma_wide.nodes, dd_sigma_wide.node_weights,
                              dd_sigma_wide.rho, dd_sigma_wide.meta)
    g = fourier_forward(f_quad, dd_family, sig, PI, PI)
    norm2 = PI ** 5 / 30
    assert l2_norm2(f_quad, 0, PI) == pytest.approx(norm2, rel=1e-12)
    assert parseval_residual(norm2, g, sig) <= 1e-5


def test_round_trip(dd_sigma_wide, dd_family):
    assert len(dd_sigma_wide.atoms) == 31
    g = fourier_forward(f_quad, dd_family, dd_sigma_wide, PI, PI)
    t = np.linspace(0, PI, 801)
    rec = fourier_inverse(g, dd_sigma_wide, dd_family, t)
    w = np.full_like(t, t[1] - t[0])
    w[[0, -1]] /= 2
    err = math.sqrt(np.sum(w * np.abs(rec - f_quad(t)) ** 2) / np.sum(w * f_quad(t) ** 2))
    assert err <= 1e-4


def test_ac_floor_drops_only_negligible_mass(dd_sigma_30):
    keep = ac_nodes(dd_sigma_30)
    if dd_sigma_30.rho is not None and len(dd_sigma_30.rho):
        mass = np.abs(dd_sigma_30.rho[:, 0, 0]) * dd_sigma_30.node_weights
        dropped = np.setdiff1d(np.arange(len(mass)), keep)
        assert mass[dropped].sum() <= 1e-8 * (mass.sum() + sum(a.weight[0, 0].real for a in dd_sigma_30.atoms))


def test_support_must_lie_in_interval(dd_sigma_30, dd_family):
    with pytest.raises(ValueError):
        fourier_forward(f_quad, dd_family, dd_sigma_30, 4.0, PI)


# -- minimal families -------------------------------------------------------------

def test_identity_family(dd_sigma_30):
    same = minimal_family(dd_sigma_30, np.eye(1))
    assert np.array_equal(same.values, dd_sigma_30.values)


@pytest.mark.parametrize("x", [0.5, 2.0, 1 - 3j])
def test_scalar_family_scales_exactly(dd_sigma_30, x):
    fam = minimal_family(dd_sigma_30, np.array([[x]]))
    assert np.abs(fam.values - abs(x) ** 2 * dd_sigma_30.values).max() <= 1e-12 * max(1, np.abs(fam.values).max())
    for a, b in zip(fam.atoms, dd_sigma_30.atoms):
        assert abs(a.weight[0, 0] - abs(x) ** 2 * b.weight[0, 0]) <= 1e-12 * abs(a.weight[0, 0])


def test_family_rejects_singular_x(dd_sigma_30):
    with pytest.raises(ValueError):
        minimal_family(dd_sigma_30, np.zeros((1, 1)))
