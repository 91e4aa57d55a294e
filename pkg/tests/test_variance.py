import numpy as np
import pytest

from measgroup.errors import InfeasibleError
from measgroup.grouping import extend_overlap, group_si
from measgroup.pauli import Hamiltonian, PauliProduct, to_dense_matrix
from measgroup.statevector import CovarianceOracle, StateVector
from measgroup.variance import (
    AllocationState,
    allocation_as_splitting,
    fragment_variance,
    group_variances,
    nonoverlapping_variance,
    optimal_allocation,
    optimal_variance,
    overlapping_variance,
    split_variance,
)

from conftest import bell, random_hamiltonian


def P(label):
    return PauliProduct.from_label(label)


def dense_variance(fragment, psi):
    A = sum(c * to_dense_matrix(p) for c, p in fragment)
    v = psi.amplitudes
    mean = np.vdot(v, A @ v).real
    return np.vdot(v, A @ A @ v).real - mean**2


def random_overlap_instance(rng, n=None):
    """A random overlapping fragment set, a state and an allocation with every term measured."""
    while True:
        n = n or int(rng.integers(2, 7))
        h = random_hamiltonian(rng, n, int(rng.integers(4, 16)))
        rel = ("qwc", "fc")[int(rng.integers(2))]
        base = group_si(h, rel)
        m = rng.dirichlet(np.ones(base.n_groups))
        ov = extend_overlap(h, base, m)
        if ov.is_overlapping:
            return ov, StateVector.random(n, rng), m


def dense_cov(p, q, psi):
    A, B = to_dense_matrix(p), to_dense_matrix(q)
    v = psi.amplitudes
    return (np.vdot(v, A @ B @ v) - np.vdot(v, A @ v) * np.vdot(v, B @ v)).real


def bookkeeping_variance(frags, psi, shots_per_group):
    """Variance of the averaged estimator by explicit per-shot double sums.

    Shot ``s`` in group ``a`` yields one outcome per member; distinct shots
    are independent.  ``P_bar_k`` averages every outcome of ``P_k``.
    """
    h = frags.hamiltonian
    shots = [(a, i) for a, n in enumerate(shots_per_group) for i in range(n)]
    N = np.zeros(h.n_terms)
    for a, _ in shots:
        N[frags.groups[a]] += 1
    total = 0.0
    for s in shots:
        g = frags.groups[s[0]]
        for j in g:
            for k in g:
                # covariance of outcomes within the same shot, zero across shots
                total += h.coeffs[j] * h.coeffs[k] * dense_cov(h.paulis[j], h.paulis[k], psi) / (N[j] * N[k])
    return total * len(shots)


class TestFragmentVariance:
    def test_single_pauli(self):
        plus = StateVector(np.array([1, 1]) / np.sqrt(2))
        oracle = CovarianceOracle(plus)
        assert fragment_variance([(0.7, P("Z"))], oracle) == pytest.approx(0.49)

    def test_eigenstate(self):
        oracle = CovarianceOracle(bell())
        assert fragment_variance([(0.3, P("ZZ")), (-1.2, P("XX"))], oracle) == pytest.approx(0, abs=1e-14)

    def test_dense(self):
        psi = StateVector.random(2, 4)
        frag = [(0.5, P("ZZ")), (0.5, P("XX"))]
        assert fragment_variance(frag, CovarianceOracle(psi)) == pytest.approx(dense_variance(frag, psi), abs=1e-12)

    def test_dense_random(self, rng):
        for _ in range(20):
            ov, psi, _ = random_overlap_instance(rng, 4)
            oracle = CovarianceOracle(psi)
            for a in range(ov.n_groups):
                frag = ov.fragment(a)
                assert fragment_variance(frag, oracle) == pytest.approx(dense_variance(frag, psi), abs=1e-10)


class TestOptimalAllocation:
    def test_examples(self):
        a = optimal_allocation([4, 1])
        assert np.allclose(a.m, [2 / 3, 1 / 3])
        assert nonoverlapping_variance([4, 1], a.m) == pytest.approx(9)
        b = optimal_allocation([1, 0])
        assert np.allclose(b.m, [1, 0])
        assert nonoverlapping_variance([1, 0], b.m) == pytest.approx(1)
        c = optimal_allocation([1, 1, 1])
        assert np.allclose(c.m, 1 / 3)
        assert optimal_variance([1, 1, 1]) == pytest.approx(9)

    def test_all_zero_uniform(self):
        assert np.allclose(optimal_allocation([0, 0]).m, 0.5)

    def test_grid_search(self, rng):
        step = 1e-3
        grid = np.arange(1, 1000) * step
        for _ in range(100):
            k = int(rng.integers(2, 4))
            v = rng.exponential(size=k)
            best = optimal_variance(v)
            assert nonoverlapping_variance(v, optimal_allocation(v).m) == pytest.approx(best, rel=1e-12)
            if k == 2:
                scan = v[0] / grid + v[1] / (1 - grid)
            else:
                a, b = np.meshgrid(grid, grid)
                c = 1 - a - b
                ok = c > step / 2
                scan = v[0] / a[ok] + v[1] / b[ok] + v[2] / c[ok]
            assert best <= scan.min() * (1 + 1e-12)

    def test_zero_variance_group_never_hurts(self, rng):
        for _ in range(20):
            v = rng.exponential(size=3)
            assert optimal_variance(np.append(v, 0.0)) <= optimal_variance(v) + 1e-15


class TestOverlappingVariance:
    def test_nonoverlapping_reduces(self, rng):
        for _ in range(20):
            h = random_hamiltonian(rng, 4, 12)
            frags = group_si(h, "qwc")
            psi = StateVector.random(4, rng)
            m = rng.dirichlet(np.ones(frags.n_groups))
            oracle = CovarianceOracle(psi)
            eq7 = nonoverlapping_variance(group_variances(frags, oracle), m)
            assert overlapping_variance(frags, AllocationState(m), oracle) == pytest.approx(eq7, rel=1e-12)

    def test_fig1_product_state(self, fig1):
        ov = extend_overlap(fig1, group_si(fig1, "fc"))
        # fixed product state (Ry(0.7)|0>) x (Ry(1.9)|0>)
        q0 = np.array([np.cos(0.35), np.sin(0.35)])
        q1 = np.array([np.cos(0.95), np.sin(0.95)])
        psi = StateVector(np.kron(q0, q1))
        got = overlapping_variance(ov, AllocationState([0.5, 0.5]), CovarianceOracle(psi))
        want = bookkeeping_variance(ov, psi, [3, 3])
        assert got == pytest.approx(want, rel=1e-12)

    def test_bookkeeping_random(self, rng):
        for _ in range(10):
            ov, psi, _ = random_overlap_instance(rng, 3)
            counts = rng.integers(1, 5, size=ov.n_groups)
            m = counts / counts.sum()
            got = overlapping_variance(ov, AllocationState(m), CovarianceOracle(psi))
            assert got == pytest.approx(bookkeeping_variance(ov, psi, counts), rel=1e-10)

    def test_eigenstate_zero(self):
        h = Hamiltonian.from_labels({"ZZ": 1.0, "XX": 0.5, "ZI": 0.0, "YY": 0.3})
        ov = extend_overlap(h, group_si(h, "qwc"))
        v = overlapping_variance(ov, AllocationState.uniform(ov.n_groups), CovarianceOracle(bell()))
        assert v == pytest.approx(0, abs=1e-14)

    def test_scale_invariant(self, rng):
        ov, psi, m = random_overlap_instance(rng)
        oracle = CovarianceOracle(psi)
        a = overlapping_variance(ov, AllocationState.normalized(m), oracle)
        b = overlapping_variance(ov, AllocationState.normalized(37.5 * m), oracle)
        assert a == pytest.approx(b, rel=1e-12)

    def test_unmeasured_term(self, fig1):
        ov = extend_overlap(fig1, group_si(fig1, "fc"))
        with pytest.raises(InfeasibleError):
            overlapping_variance(ov, AllocationState([0.0, 1.0]), CovarianceOracle(StateVector.basis(2)))


class TestSplitting:
    def test_single_membership_keeps_coefficients(self, h2):
        frags = group_si(h2, "fc")
        out = allocation_as_splitting(frags, AllocationState.uniform(frags.n_groups))
        for a, g in enumerate(out.groups):
            assert np.array_equal(out.split_coeffs[a], h2.coeffs[g])

    def test_fig1_equal_split(self, fig1):
        ov = extend_overlap(fig1, group_si(fig1, "fc"))
        out = allocation_as_splitting(ov, AllocationState([0.5, 0.5]))
        c2 = fig1.coeffs[fig1.index(P("ZZ"))]
        assert out.split_coeffs[0][1] == pytest.approx(c2 / 2)
        assert out.split_coeffs[1][1] == pytest.approx(c2 / 2)

    def test_identity_random(self, rng):
        for _ in range(100):
            ov, psi, m = random_overlap_instance(rng)
            oracle = CovarianceOracle(psi)
            alloc = AllocationState(m)
            split = allocation_as_splitting(ov, alloc)
            assert split.reconstruction_error() <= 1e-12
            eq19 = overlapping_variance(ov, alloc, oracle)
            eq7 = nonoverlapping_variance(group_variances(split, oracle), m)
            assert abs(eq19 - eq7) <= 1e-10 * max(abs(eq19), 1e-300)

    def test_split_report(self, fig1):
        ov = extend_overlap(fig1, group_si(fig1, "fc"))
        rep = split_variance(ov, CovarianceOracle(StateVector.random(2, 1)))
        assert rep.total_variance == pytest.approx(optimal_variance(rep.per_group_variance))
        assert rep.epsilon(100) == pytest.approx(np.sqrt(rep.total_variance / 100))
