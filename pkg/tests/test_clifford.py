import numpy as np
import pytest

from measgroup.clifford import (
    GATE_NAMES,
    CliffordTableau,
    apply_gates,
    rotate_and_sample,
    synthesize,
)
from measgroup.errors import ContractError
from measgroup.pauli import PauliProduct, to_dense_matrix
from measgroup.statevector import StateVector, expectation, sample_group

from conftest import bell, random_clifford, random_commuting_group


def P(label):
    return PauliProduct.from_label(label)


def dense_unitary(gates, n):
    cols = [apply_gates(gates, StateVector.basis(n, i)).amplitudes for i in range(1 << n)]
    return np.array(cols).T


class TestExamples:
    def test_all_z(self):
        group = [P("ZI"), P("ZZ")]
        dg = synthesize(group)
        assert dg.tableau.gates == []
        assert dg.z_images == group

    def test_zz_xx(self):
        dg = synthesize([P("ZZ"), P("XX")])
        assert all(img.x == 0 for img in dg.z_images)
        assert dg.z_images[0].z != dg.z_images[1].z
        U = dense_unitary(dg.tableau.gates, 2)
        for p, img in zip(dg.paulis, dg.z_images):
            assert np.allclose(U @ to_dense_matrix(p) @ U.conj().T, to_dense_matrix(img), atol=1e-12)

    def test_qwc_single_qubit(self):
        dg = synthesize([P("XI"), P("XZ")])
        assert dg.tableau.gates == [("H", 0)]
        assert [img.label for img in dg.z_images] == ["ZI", "ZZ"]
        assert all(img.phase == 0 for img in dg.z_images)

    def test_y_sign(self):
        dg = synthesize([P("Y")])
        assert dg.tableau.gates == [("S", 0), ("H", 0)]
        assert dg.z_images[0] == PauliProduct(1, 0, 1, 2)
        assert dg.z_poly[0][0] == -1.0

    def test_noncommuting(self):
        with pytest.raises(ContractError):
            synthesize([P("X"), P("Z")])

    def test_circuit_text(self):
        dg = synthesize([P("ZZ"), P("XX")])
        lines = dg.tableau.circuit().splitlines()
        assert all(line.split()[0] in GATE_NAMES for line in lines)

    def test_z_poly_coefficients(self):
        dg = synthesize([P("YY"), P("XX")], [0.3, -0.7])
        got = sorted(abs(c) for c, _ in dg.z_poly)
        assert got == pytest.approx([0.3, 0.7])
        assert all(z.x == 0 and z.phase == 0 for _, z in dg.z_poly)


class TestRandomGroups:
    def test_five_hundred(self):
        rng = np.random.default_rng(500)
        for _ in range(500):
            n = int(rng.integers(1, 7))
            group = random_commuting_group(rng, n)
            dg = synthesize(group)
            tab = dg.tableau
            assert all(g[0] in GATE_NAMES for g in tab.gates)
            assert tab.is_symplectic()
            # the gate list applied to the identity reproduces the stored images
            fresh = CliffordTableau(n)
            for g in tab.gates:
                fresh.apply(g)
            assert fresh.x_images == tab.x_images and fresh.z_images == tab.z_images
            for p, img in zip(group, dg.z_images):
                assert img.x == 0
                assert tab.replay(p) == img
                assert tab.conjugate(p) == img
            if n <= 4:
                U = dense_unitary(tab.gates, n)
                for p, img in zip(group, dg.z_images):
                    assert np.allclose(U @ to_dense_matrix(p) @ U.conj().T, to_dense_matrix(img), atol=1e-12)

    def test_expectation_preserved(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 7))
            group = random_commuting_group(rng, n)
            dg = synthesize(group)
            psi = StateVector.random(n, rng)
            rotated = apply_gates(dg.tableau.gates, psi)
            for p, img in zip(group, dg.z_images):
                assert abs(expectation(p, psi) - expectation(img, rotated)) <= 1e-10

    def test_random_tableau_symplectic(self, rng):
        for _ in range(50):
            tab = random_clifford(rng, int(rng.integers(1, 6)))
            assert tab.is_symplectic()


class TestRotateAndSample:
    def test_all_z(self):
        dg = synthesize([P("ZI"), P("ZZ")])
        out = rotate_and_sample(dg, StateVector.basis(2), 200, seed=0)
        assert np.all(out == 1)

    def test_bell(self):
        dg = synthesize([P("ZZ"), P("XX")])
        out = rotate_and_sample(dg, bell(), 500, seed=1)
        assert np.all(out == 1)

    def test_matches_collapse(self, rng):
        shots = 100_000
        for _ in range(10):
            group = random_commuting_group(rng, 3, 4)
            psi = StateVector.random(3, rng)
            a = rotate_and_sample(synthesize(group), psi, shots, seed=int(rng.integers(1 << 30)))
            b = sample_group(group, psi, shots, seed=int(rng.integers(1 << 30)))
            se = np.sqrt(np.maximum(a.var(axis=0) + b.var(axis=0), 1e-300) / shots)
            assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 5 * se + 1e-12)
