import numpy as np
import pytest

from measgroup.clifford import CliffordTableau
from measgroup.io import read_hamiltonian
from measgroup.pauli import Hamiltonian, PauliProduct
from measgroup.statevector import StateVector, ground_state


def random_pauli(rng, n, phase=0):
    return PauliProduct(n, int(rng.integers(0, 1 << n)), int(rng.integers(0, 1 << n)), phase)


def random_clifford(rng, n, depth=None):
    tab = CliffordTableau(n)
    for _ in range(depth or 4 * n + 2):
        kind = rng.integers(4)
        if kind < 2 or n == 1:
            tab.apply((("H", "S")[kind % 2], int(rng.integers(n))))
        else:
            a, b = rng.choice(n, size=2, replace=False)
            tab.apply((("CNOT", "CZ")[kind - 2], int(a), int(b)))
    return tab


def random_commuting_group(rng, n, size=None):
    """Distinct Hermitian Paulis from a random stabiliser-like abelian group."""
    tab = random_clifford(rng, n)
    size = size or int(rng.integers(1, min(2 ** n - 1, 6) + 1))
    zs = rng.choice(np.arange(1, 1 << n), size=min(size, (1 << n) - 1), replace=False)
    return [tab.conjugate(PauliProduct(n, 0, int(z))).with_phase(0) for z in zs]


def random_hamiltonian(rng, n, n_terms):
    terms = {}
    n_terms = min(n_terms, 4 ** n - 1)
    while len(terms) < n_terms:
        p = random_pauli(rng, n)
        if not p.is_identity:
            terms[p.key] = (float(rng.normal()), p)
    return Hamiltonian(n, list(terms.values()))


@pytest.fixture(scope="session")
def fig1():
    return read_hamiltonian("fig1")


@pytest.fixture(scope="session")
def h2():
    return read_hamiltonian("h2")


@pytest.fixture(scope="session")
def h2_ground(h2):
    return ground_state(h2)


@pytest.fixture(scope="session")
def fig1_ground(fig1):
    return ground_state(fig1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def bell():
    return StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
