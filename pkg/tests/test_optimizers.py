import numpy as np
import pytest

from measgroup.grouping import FragmentSet, extend_overlap, group_si
from measgroup.io import read_hamiltonian
from measgroup.optimizers import (
    SplitKKT,
    SplitProblem,
    allocation_gradient,
    allocation_gradient_by_cases,
    gma_optimize,
    ics_gradient,
    ics_optimize,
    ima_optimize,
    softmax_gradient,
)
from measgroup.pauli import Hamiltonian, PauliProduct
from measgroup.pipeline import si_start
from measgroup.statevector import CovarianceOracle, StateVector, ground_state
from measgroup.variance import (
    AllocationState,
    group_variances,
    nonoverlapping_variance,
    optimal_allocation,
    optimal_variance,
    overlap_variance_from_blocks,
)

from conftest import random_hamiltonian


def overlap_case(rng, n_groups=None, n=4):
    """Random overlapping set with a random state; optionally a fixed group count."""
    while True:
        h = random_hamiltonian(rng, n, int(rng.integers(5, 16)))
        base = group_si(h, ("qwc", "fc")[int(rng.integers(2))])
        if n_groups is not None and base.n_groups != n_groups:
            continue
        ov = extend_overlap(h, base, rng.dirichlet(np.ones(base.n_groups)))
        if ov.is_overlapping:
            psi = StateVector.random(n, rng)
            oracle = CovarianceOracle(psi)
            return ov, oracle, oracle.covariance_blocks(h, ov.groups)


def fig1_case():
    h = read_hamiltonian("fig1")
    ov = extend_overlap(h, group_si(h, "fc"))
    # a fixed generic state; the ground state gives no gain from overlap
    psi = StateVector.random(2, 2024, real=True)
    return h, ov, CovarianceOracle(psi)


class TestIMA:
    def test_nonoverlapping_fixed_point(self, rng):
        h = random_hamiltonian(rng, 4, 12)
        frags = group_si(h, "qwc")
        oracle = CovarianceOracle(StateVector.random(4, rng))
        alloc, trace = ima_optimize(frags, oracle, allocation=AllocationState.uniform(frags.n_groups))
        want = optimal_allocation(group_variances(frags, oracle)).m
        assert np.allclose(alloc.m, want, atol=1e-12)
        assert trace.variances[1] == pytest.approx(trace.variances[-1])

    def test_never_worse(self, rng):
        for _ in range(20):
            ov, oracle, blocks = overlap_case(rng)
            m0 = rng.dirichlet(np.ones(ov.n_groups))
            alloc, trace = ima_optimize(ov, oracle, allocation=m0, blocks=blocks)
            start = overlap_variance_from_blocks(ov, blocks, m0)
            assert overlap_variance_from_blocks(ov, blocks, alloc.m) <= start + 1e-15
            assert trace.variances[0] == pytest.approx(start)

    def test_h2_qwc(self, h2, h2_ground):
        oracle = CovarianceOracle(h2_ground[1])
        si = group_si(h2, "qwc")
        start = si_start(si, oracle)
        ov = extend_overlap(h2, si, start)
        alloc, _ = ima_optimize(ov, oracle, allocation=start)
        assert overlap_variance_from_blocks(ov, oracle.covariance_blocks(h2, ov.groups), alloc.m) == pytest.approx(0.136, abs=5e-3)


class TestGMA:
    def test_single_group(self):
        h = Hamiltonian.from_labels({"ZI": 1.0, "ZZ": 0.5, "IZ": -0.3})
        frags = FragmentSet.from_partition(h, "qwc", [[0, 1, 2]])
        oracle = CovarianceOracle(StateVector.random(2, 3))
        blocks = oracle.covariance_blocks(h, frags.groups)
        _, g = allocation_gradient(frags, blocks, np.array([1.0]))
        assert softmax_gradient(np.array([1.0]), g) == pytest.approx([0.0])
        alloc, _ = gma_optimize(frags, oracle, allocation=[1.0])
        assert alloc.m == pytest.approx([1.0])

    def test_finite_differences(self, rng):
        h_step = 1e-6
        for _ in range(20):
            ov, oracle, blocks = overlap_case(rng, n_groups=3)
            p = rng.normal(size=3)

            def value(p):
                return overlap_variance_from_blocks(ov, blocks, AllocationState.from_logits(p).m)

            m = AllocationState.from_logits(p).m
            _, g = allocation_gradient(ov, blocks, m)
            analytic = softmax_gradient(m, g)
            fd = np.array([(value(p + h_step * e) - value(p - h_step * e)) / (2 * h_step) for e in np.eye(3)])
            assert np.max(np.abs(analytic - fd)) <= 1e-5 * max(np.max(np.abs(fd)), 1e-3)

    def test_matches_pairwise_cases(self, rng):
        for _ in range(20):
            ov, oracle, blocks = overlap_case(rng)
            m = rng.dirichlet(np.ones(ov.n_groups))
            _, g = allocation_gradient(ov, blocks, m)
            assert np.allclose(g, allocation_gradient_by_cases(ov, blocks, m), rtol=1e-10, atol=1e-12)

    def test_inside_simplex(self, rng):
        ov, oracle, blocks = overlap_case(rng)
        alloc, trace = gma_optimize(ov, oracle, steps=50, blocks=blocks)
        assert abs(alloc.m.sum() - 1) <= 1e-12
        assert np.all(alloc.m > 0)
        assert np.all(np.diff(trace.variances) <= 0)

    def test_lih_fc_below_ima(self):
        h = read_hamiltonian("lih")
        oracle = CovarianceOracle(ground_state(h)[1])
        si = group_si(h, "fc")
        start = si_start(si, oracle)
        ov = extend_overlap(h, si, start)
        blocks = oracle.covariance_blocks(h, ov.groups)
        ima, _ = ima_optimize(ov, oracle, allocation=start, blocks=blocks)
        gma, _ = gma_optimize(ov, oracle, allocation=start, blocks=blocks)
        v_ima = overlap_variance_from_blocks(ov, blocks, ima.m)
        v_gma = overlap_variance_from_blocks(ov, blocks, gma.m)
        assert v_gma <= v_ima
        assert v_gma < 0.6


class TestICS:
    def test_no_overlap(self, h2, h2_ground):
        frags = group_si(h2, "fc")
        out, alloc, trace = ics_optimize(frags, CovarianceOracle(h2_ground[1]))
        assert out is frags
        assert len(trace.entries) == 1

    def test_fig1_scan(self):
        h, ov, oracle = fig1_case()
        blocks = oracle.covariance_blocks(h, ov.groups)
        frags, alloc, _ = ics_optimize(ov, oracle, blocks=blocks)
        v_ics = nonoverlapping_variance(group_variances(frags, None, blocks), alloc.m)
        zz = h.index(PauliProduct.from_label("ZZ"))
        c2 = h.coeffs[zz]
        pos = [int(np.flatnonzero(g == zz)[0]) for g in ov.groups]
        scan = []
        for x in np.arange(-3.0, 3.0 + 1e-9, 1e-3):
            cfs = [cf.copy() for cf in ov.split_coeffs]
            cfs[0][pos[0]] = x
            cfs[1][pos[1]] = c2 - x
            scan.append(optimal_variance(group_variances(ov.with_coeffs(cfs), None, blocks)))
        assert v_ics <= min(scan) + 1e-12
        assert abs(frags.split_coeffs[0][pos[0]]) < 3.0
        # the gain from splitting is real on this state
        assert v_ics < optimal_variance(group_variances(group_si(h, "fc"), oracle)) - 1e-3

    def test_h2_fc(self, h2, h2_ground):
        oracle = CovarianceOracle(h2_ground[1])
        si = group_si(h2, "fc")
        start = si_start(si, oracle)
        frags, alloc, _ = ics_optimize(extend_overlap(h2, si, start), oracle, allocation=start)
        v = nonoverlapping_variance(group_variances(frags, oracle), alloc.m)
        assert v == pytest.approx(0.136, abs=5e-3)

    def test_monotone_and_stationary(self, rng):
        for _ in range(20):
            ov, oracle, blocks = overlap_case(rng, n=int(rng.integers(3, 6)))
            frags, alloc, trace = ics_optimize(ov, oracle, blocks=blocks, tol=1e-12)
            v = trace.variances
            assert np.all(np.diff(v) <= 1e-12 * v[:-1])
            assert frags.reconstruction_error() <= 1e-12
            grad = ics_gradient(frags, blocks, alloc.m)
            assert np.max(np.abs(grad), initial=0.0) <= 1e-8

    def test_kkt_matches_dense_elimination(self, rng):
        for _ in range(20):
            ov, oracle, blocks = overlap_case(rng)
            m = rng.dirichlet(np.ones(ov.n_groups))
            kkt, _ = SplitKKT(ov, blocks, m, ov.split_coeffs).solve()
            prob = SplitProblem(ov, blocks, m, ov.split_coeffs)
            G = prob.dense_hessian()
            b = prob.rhs()
            y = np.linalg.lstsq(G, -b, rcond=None)[0]
            dense = prob.coefficients(y)
            v_kkt = nonoverlapping_variance(group_variances(ov.with_coeffs(kkt), None, blocks), m)
            v_dense = nonoverlapping_variance(group_variances(ov.with_coeffs(dense), None, blocks), m)
            assert v_kkt == pytest.approx(v_dense, rel=1e-9, abs=1e-13)
            # the gradient route agrees with the Hessian route
            y0 = prob.initial_vector(ov.split_coeffs)
            assert np.allclose(prob.gradient(y0), 2 * (G @ y0 + b), atol=1e-10)
            op = prob.hessian_operator()
            assert np.allclose(np.column_stack([op.matvec(e) for e in np.eye(prob.n_vars)]), G, atol=1e-12)

    def test_subset_mode(self, rng):
        ov, oracle, blocks = overlap_case(rng)
        full, _, _ = ics_optimize(ov, oracle, blocks=blocks)
        part, alloc, _ = ics_optimize(ov, oracle, blocks=blocks, max_free=1)
        changed = sum(int(np.sum(np.abs(a - b) > 1e-14)) for a, b in zip(part.split_coeffs, ov.split_coeffs))
        assert part.reconstruction_error() <= 1e-12
        assert changed <= 2
