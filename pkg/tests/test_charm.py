import cmath

import mpmath
import numpy as np
import pytest

from weylkit.boundary import WeylError, weyl_matrix
from weylkit.charm import (STRUCT_GRID, SingularPairError, StructureError, char_matrix, characterize,
                           herglotz_battery, krein_offset, m_function, m_function_batch, m_function_krein,
                           omega_from_weyl, strictness_and_growth, structure_defect)
from weylkit.nev_pairs import im_part

from conftest import PAIR_SPECS, get_case

ISQRTI = 1j * cmath.sqrt(1j)
GRID_4X4 = [complex(re, im) for re in (-2.0, -0.5, 1.0, 3.0) for im in (-2.0, -0.5, 0.5, 2.0)]


def dd_oracle(lam):
    k = mpmath.sqrt(mpmath.mpc(lam))
    return complex(-k * mpmath.cot(k * mpmath.pi))


def robin_oracle(lam):
    # v = cos(k(pi - t)) - k sin(k(pi - t)) meets v'(pi) = lam v(pi); m_P = v'(0)/v(0)
    k = mpmath.sqrt(mpmath.mpc(lam))
    s, c = mpmath.sin(k * mpmath.pi), mpmath.cos(k * mpmath.pi)
    return complex((k * s + k * k * c) / (c - k * s))


def test_worked_chain_on_the_half_line():
    case = get_case("dirichlet_half")
    s = characterize(*case.args, 1j)
    assert np.abs(s.Omega - np.array([[0, 0.5], [0.5, ISQRTI]])).max() < 1e-6
    assert np.abs(s.OmegaW - np.array([[ISQRTI, -0.5], [-0.5, 0]])).max() < 1e-6
    assert structure_defect(s.OmegaW, case.geom)["zero_block"] < 1e-8
    assert abs(s.mP[0, 0] - ISQRTI) < 1e-6


@pytest.mark.parametrize("lam", [2.0, 1 + 1j, -1 + 0.5j, 0.3 + 4j])
def test_dirichlet_dirichlet_closed_form(lam):
    mP = characterize(*get_case("dirichlet_pi").args, lam).mP[0, 0]
    want = dd_oracle(lam)
    assert abs(mP - want) <= 1e-6 * abs(want)


@pytest.mark.parametrize("lam", [1j, 2 + 1j, -3 + 0.5j, 10 + 2j])
def test_robin_closed_form(lam):
    case = get_case("robin_pi")
    want = robin_oracle(lam)
    for got in (characterize(*case.args, lam).mP[0, 0], m_function_krein(*case.args, lam)[0, 0]):
        assert abs(got - want) <= 1e-6 * max(1, abs(want))


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_dual_routes_agree_on_grid(name):
    case = get_case(name)
    for lam in GRID_4X4:
        a = characterize(*case.args, lam).mP
        b = m_function_krein(*case.args, lam)
        assert np.abs(a - b).max() <= 1e-8 * (1 + np.abs(a).max())


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_omega_conjugate_symmetry(name):
    case = get_case(name)
    for lam in (1 + 2j, -2 + 1j):
        up = char_matrix(case.problem, case.triplet, case.pair, lam).Omega
        # lower value from scratch, not through the reflection
        M = weyl_matrix(case.problem, case.triplet, np.conj(lam)).M
        low = omega_from_weyl(M, *case.pair(np.conj(lam)), case.problem.n)[0]
        assert np.abs(low - up.conj().T).max() < 1e-8


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_herglotz_battery(name):
    hb = herglotz_battery(*get_case(name).args)
    assert hb["min_im_ratio"] >= -1e-8
    assert hb["symmetry"] <= 1e-8
    assert hb["route_gap"] <= 1e-8


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_krein_offset_is_one_hermitian_constant(name):
    off = krein_offset(*get_case(name).args)
    assert off["spread"] < 1e-8 and off["hermitian_defect"] < 1e-8


def test_rank_dichotomy():
    dd = strictness_and_growth(*get_case("dirichlet_pi").args)
    per = strictness_and_growth(*get_case("periodic_pi").args)
    assert (dd["rank_im_omega"], dd["uniformly_strict"]) == (1, False)
    assert (per["rank_im_omega"], per["uniformly_strict"]) == (2, True)
    assert dd["min_im_mP"] > 0 and per["min_im_mP"] > 0


def test_growth_trend_decreases():
    for name in ("dirichlet_half", "dirichlet_pi", "periodic_pi"):
        g = strictness_and_growth(*get_case(name).args)["growth"]
        assert g[0] > g[1] > g[2]


def test_batch_matches_pointwise():
    case = get_case("periodic_pi")
    lams = np.array([1 + 0.01j, 4.5 + 0.1j, 20 + 1j])
    got = m_function_batch(*case.args, lams)
    for lam, m in zip(lams, got):
        assert np.abs(m - characterize(*case.args, lam).mP).max() < 1e-8 * (1 + np.abs(m).max())
    with pytest.raises(ValueError):
        m_function_batch(*case.args, [1 - 1j])


def test_neumann_half_line_is_herglotz():
    case = get_case("neumann_half")
    for lam in STRUCT_GRID:
        m = characterize(*case.args, lam).mP
        assert np.linalg.eigvalsh(im_part(m) / lam.imag).min() > 0


def test_structure_violation_is_reported():
    case = get_case("dirichlet_half")
    s = char_matrix(case.problem, case.triplet, case.pair, 1j)
    broken = type(s)(s.lam, s.M, s.Omega + 0.1, s.R)
    with pytest.raises(StructureError):
        m_function(broken, case.geom)


def test_real_lambda_at_neumann_eigenvalue_fails_loudly():
    case = get_case("dirichlet_pi")
    with pytest.raises((WeylError, SingularPairError)):
        characterize(*case.args, 1.0)
