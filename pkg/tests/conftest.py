import math
from pathlib import Path

import numpy as np
import pytest

from weylkit.boundary import make_triplet
from weylkit.nev_pairs import build_pair, n_block_data
from weylkit.ode_engine import Problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


class Case:
    """Problem, triplet, pair and geometry bundled for the tests."""

    def __init__(self, name, problem, pair_spec, **triplet_kw):
        self.name = name
        self.problem = problem
        self.triplet = make_triplet(problem, **triplet_kw)
        self.pair = build_pair(problem.n, self.triplet.endpoint, pair_spec)
        self.geom = n_block_data(self.pair)

    @property
    def args(self):
        return self.problem, self.triplet, self.pair, self.geom

    def __repr__(self):
        return f"Case({self.name})"


def _free_halfline():
    return Problem.from_strings(["1", "0"])


def _free_pi():
    return Problem.from_strings(["1", "0"], b=math.pi, closed=True)


def _beam():
    return Problem.from_strings(["1", "0", "0"], b=1.0, closed=True)


PAIR_SPECS = {
    "dirichlet_half": (_free_halfline, {"N0": [[0]], "N1": [[1]]}),
    "neumann_half": (_free_halfline, {"N0": [[1]], "N1": [[0]]}),
    "dirichlet_pi": (_free_pi, {"N0": [[0]], "N1": [[1]], "C02": [[0]], "C12": [[1]]}),
    "robin_pi": (_free_pi, {"N0": [[0]], "N1": [[1]], "C02": [["1"]], "C12": [["lam"]]}),
    "periodic_pi": (_free_pi, {"N0": [[0], [1]], "N1": [[1], [0]], "C01": [[0], [-1]], "C11": [[1], [0]]}),
    "clamped_beam": (_beam, {"N0": np.zeros((2, 2)), "N1": np.eye(2), "C02": np.zeros((2, 2)),
                             "C12": np.eye(2)}),
}

_CACHE = {}


def get_case(name):
    if name not in _CACHE:
        make, spec = PAIR_SPECS[name]
        _CACHE[name] = Case(name, make(), spec)
    return _CACHE[name]


@pytest.fixture(scope="session")
def problems_dir():
    return PROBLEMS


@pytest.fixture(params=sorted(PAIR_SPECS))
def any_case(request):
    return get_case(request.param)


@pytest.fixture(scope="session")
def dir_half():
    return get_case("dirichlet_half")


@pytest.fixture(scope="session")
def neu_half():
    return get_case("neumann_half")


@pytest.fixture(scope="session")
def dd():
    return get_case("dirichlet_pi")


@pytest.fixture(scope="session")
def robin():
    return get_case("robin_pi")


@pytest.fixture(scope="session")
def periodic():
    return get_case("periodic_pi")


@pytest.fixture(scope="session")
def beam():
    return get_case("clamped_beam")


@pytest.fixture(scope="session")
def dd_sigma_30(dd):
    from weylkit.charm import m_function_batch
    from weylkit.spectral import invert_stieltjes

    return invert_stieltjes(lambda l: m_function_batch(*dd.args, l), (0.0, 30.0), grid_step=0.02)


@pytest.fixture(scope="session")
def dd_sigma_wide(dd):
    """Spectral function far enough out (atoms k <= 31) for transform round trips."""
    from weylkit.charm import m_function_batch
    from weylkit.spectral import invert_stieltjes

    return invert_stieltjes(lambda l: m_function_batch(*dd.args, l), (0.0, 1000.0), grid_step=1.0)


@pytest.fixture(scope="session")
def dd_family(dd):
    from weylkit.green_resolvent import phi_n

    return lambda s, T: phi_n(dd.problem, dd.geom, s, T, 1e-11)
