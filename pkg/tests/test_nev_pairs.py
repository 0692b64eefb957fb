import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space

from weylkit.nev_pairs import (PairError, Rational, build_pair, n_block_asymmetry,
                               n_block_data, n_block_drift, symplectic_j, validate_pair)

from conftest import PAIR_SPECS, get_case


def test_rational_parsing():
    r = Rational.parse("[1, 2]/[3, 0, 1]")
    assert r(2.0) == pytest.approx(5 / 7)
    assert Rational.parse("lam")(3j) == 3j
    assert Rational.parse("-lam")(3j) == -3j
    assert Rational.parse("2.5")(9.0) == 2.5
    assert Rational.parse("2.5").is_constant and not Rational.parse("lam").is_constant


@pytest.mark.parametrize("bad", ["[1]/[0]", "1/2/3", "[1, x]", "foo"])
def test_rational_rejects(bad):
    with pytest.raises(PairError):
        Rational.parse(bad)


def test_smallest_pair_shape():
    p = build_pair(1, 0, {"N0": [[0]], "N1": [[1]]})
    C0, C1 = p(1j)
    assert C0.shape == (1, 1) and p.k_hat == 1 and p.is_constant


def test_dirichlet_dirichlet_pair_is_constant_two_by_two():
    p = get_case("dirichlet_pi").pair
    C0, C1 = p(5j)
    assert np.array_equal(C0, np.zeros((2, 2)))
    assert np.array_equal(C1, np.eye(2))


@pytest.mark.parametrize("name", sorted(PAIR_SPECS))
def test_acceptance_pairs_validate(name):
    rep = validate_pair(get_case(name).pair)
    assert rep.ok, str(rep)


def test_non_symmetric_n_block_fails_check_v():
    p = build_pair(1, 0, {"N0": [[1]], "N1": [[1j]]})
    rep = validate_pair(p)
    assert not rep.checks["(v) N symmetric, full rank"]
    N0, N1 = p.N0, p.N1
    assert np.abs(N0 @ N1.conj().T - N1 @ N0.conj().T)[0, 0] == pytest.approx(2.0)


def test_robin_sign_probe():
    base = {"N0": [[0]], "N1": [[1]], "C02": [["1"]]}
    good = build_pair(1, 1, dict(base, C12=[["lam"]]))
    bad = build_pair(1, 1, dict(base, C12=[["-lam"]]))
    assert validate_pair(good).checks["(i) Im C1 C0* >= 0"]
    assert not validate_pair(bad).checks["(i) Im C1 C0* >= 0"]


def test_left_block_does_not_move_with_lambda():
    for name in ("dirichlet_pi", "robin_pi", "periodic_pi"):
        assert n_block_drift(get_case(name).pair) < 1e-10


def test_asymmetry_reduces_to_square_formula():
    rng = np.random.default_rng(7)
    for _ in range(20):
        N0 = rng.normal(size=(1, 1)) + 1j * rng.normal(size=(1, 1))
        N1 = rng.normal(size=(1, 1)) + 1j * rng.normal(size=(1, 1))
        sq = np.abs(N0 @ N1.conj().T - N1 @ N0.conj().T).max()
        assert (n_block_asymmetry(N0, N1) < 1e-12) == (sq < 1e-12)


def test_shape_errors():
    with pytest.raises(PairError):
        build_pair(1, 0, {"N0": [[0, 1]], "N1": [[1]]})
    with pytest.raises(PairError):
        build_pair(1, 1, {"N0": [[0]], "N1": [[1]], "C02": [[0, 0]]})


# -- W' geometry -----------------------------------------------------------------

def _brute_force_w(N0, N1):
    """Independent completion: orthonormal complement from scipy, oriented like J V1."""
    V1 = np.hstack([-N0, N1]).conj().T
    comp = null_space(V1.conj().T)
    J = symplectic_j(N0.shape[1])
    seed = J @ V1
    # project the seed onto the complement to fix orientation (one column here)
    c = comp @ (comp.conj().T @ seed)
    c = c / np.linalg.norm(c, axis=0)
    return np.hstack([V1, c])


def test_dirichlet_geometry_by_hand():
    g = n_block_data(build_pair(1, 0, {"N0": [[0]], "N1": [[1]]}))
    assert np.allclose(g.N_prime, [[0, 1]])
    assert np.allclose(g.N_hat, [[0], [1]])
    assert np.allclose(g.W_prime, [[0, -1], [1, 0]])
    assert np.allclose(g.J_W, [[0, -1], [1, 0]])
    assert np.allclose(g.J1, 0) and np.allclose(g.J2, 1) and np.allclose(g.J4, 0)
    assert np.allclose(g.W_prime, _brute_force_w(np.array([[0.0]]), np.array([[1.0]])))


def test_neumann_geometry_by_hand():
    g = n_block_data(build_pair(1, 0, {"N0": [[1]], "N1": [[0]]}))
    assert np.allclose(g.N_prime, [[-1, 0]])
    assert np.allclose(g.N_hat, [[-1], [0]])
    second = g.W_prime[:, 1]
    assert np.allclose(np.abs(second), [0, 1])
    assert np.allclose(g.W_prime, _brute_force_w(np.array([[1.0]]), np.array([[0.0]])))


def test_invertible_n_has_empty_complement():
    g = get_case("periodic_pi").geom
    assert g.J2.shape == (0, 2)
    N0, N1 = get_case("periodic_pi").pair.N0, get_case("periodic_pi").pair.N1
    assert np.allclose(g.W_prime, np.hstack([-N0, N1]).conj().T)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_j_w_is_skew_and_w_unitary_for_real_angles(theta):
    N0 = np.array([[np.cos(theta)]])
    N1 = np.array([[np.sin(theta)]])
    g = n_block_data(build_pair(1, 0, {"N0": N0, "N1": N1}))
    assert np.abs(g.J_W + g.J_W.conj().T).max() < 1e-12
    assert np.allclose(g.W_prime.conj().T @ g.W_prime, np.eye(2), atol=1e-12)
    assert validate_pair(build_pair(1, 0, {"N0": N0, "N1": N1})).ok


def test_describe_round_trips_entries():
    d = get_case("robin_pi").pair.describe()
    assert d["C12"] == [["[0.0, 1.0]"]] and d["k_hat"] == 1
